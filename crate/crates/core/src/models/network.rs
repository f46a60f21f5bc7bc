use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use super::features::{FactorKind, Normalization, TripFeatures, DAYS_PER_WEEK, SLICES_PER_DAY};
use super::record::{join, leaf, Visit};
use super::route::route_eta;
use crate::error::{Error, Result};
use crate::nn::{
    attention_block, ffn_forward, lstm_forward, multi_head_block, pool_sequence, rnn_forward,
    AttentionBlockParams, DenseLayer, Dropout, FfnParams, LstmParams, MultiHeadParams, NormParams,
    RnnParams,
};
use crate::tensor::{Tape, Tensor, Var};

/// Embeddings, front FFNs, final FFN and regressor shared by every learned
/// variant.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Trunk<T> {
    link_embedding: T,
    factor_ffns: Vec<FfnParams<T>>,
    driver_embedding: T,
    day_embedding: T,
    slice_embedding: T,
    final_ffn: FfnParams<T>,
    regressor: DenseLayer<T>,
}

/// The sequence extractor that distinguishes the variants.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Extractor<T> {
    Fma {
        combined_ffn: FfnParams<T>,
        factors: Vec<AttentionBlockParams<T>>,
        combined: AttentionBlockParams<T>,
        w_o: T,
    },
    Rnn(RnnParams<T>),
    Lstm(LstmParams<T>),
    Ffn(FfnParams<T>),
    Resnet {
        input: DenseLayer<T>,
        blocks: Vec<FfnParams<T>>,
    },
    MultiHead {
        input: DenseLayer<T>,
        attention: MultiHeadParams<T>,
        norm: NormParams<T>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Network<T> {
    trunk: Trunk<T>,
    extractor: Extractor<T>,
}

fn factor_name(kind: FactorKind) -> &'static str {
    match kind {
        FactorKind::LinkLengthM => "length",
        FactorKind::ConditionSpeedMps => "speed",
        FactorKind::LinkTimeS => "link_time",
        FactorKind::LinkId => "link_id",
    }
}

impl<T> Trunk<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Trunk<U> {
        Trunk {
            link_embedding: f(&self.link_embedding),
            factor_ffns: self.factor_ffns.iter().map(|p| p.map(f)).collect(),
            driver_embedding: f(&self.driver_embedding),
            day_embedding: f(&self.day_embedding),
            slice_embedding: f(&self.slice_embedding),
            final_ffn: self.final_ffn.map(f),
            regressor: self.regressor.map(f),
        }
    }
}

impl<T> Visit<T> for Trunk<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        leaf(prefix, "link_embedding", &self.link_embedding, f);
        for (kind, ffn) in FactorKind::ALL.iter().zip(&self.factor_ffns) {
            ffn.visit(&join(prefix, &format!("front_ffn.{}", factor_name(*kind))), f);
        }
        leaf(prefix, "driver_embedding", &self.driver_embedding, f);
        leaf(prefix, "day_embedding", &self.day_embedding, f);
        leaf(prefix, "slice_embedding", &self.slice_embedding, f);
        self.final_ffn.visit(&join(prefix, "final_ffn"), f);
        self.regressor.visit(&join(prefix, "regressor"), f);
    }
}

impl<T> Extractor<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Extractor<U> {
        match self {
            Extractor::Fma {
                combined_ffn,
                factors,
                combined,
                w_o,
            } => Extractor::Fma {
                combined_ffn: combined_ffn.map(f),
                factors: factors.iter().map(|p| p.map(f)).collect(),
                combined: combined.map(f),
                w_o: f(w_o),
            },
            Extractor::Rnn(p) => Extractor::Rnn(p.map(f)),
            Extractor::Lstm(p) => Extractor::Lstm(p.map(f)),
            Extractor::Ffn(p) => Extractor::Ffn(p.map(f)),
            Extractor::Resnet { input, blocks } => Extractor::Resnet {
                input: input.map(f),
                blocks: blocks.iter().map(|b| b.map(f)).collect(),
            },
            Extractor::MultiHead {
                input,
                attention,
                norm,
            } => Extractor::MultiHead {
                input: input.map(f),
                attention: attention.map(f),
                norm: norm.map(f),
            },
        }
    }
}

impl<T> Visit<T> for Extractor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        match self {
            Extractor::Fma {
                combined_ffn,
                factors,
                combined,
                w_o,
            } => {
                let p = join(prefix, "fma");
                combined_ffn.visit(&join(&p, "combined_ffn"), f);
                for (kind, block) in FactorKind::ALL.iter().zip(factors) {
                    block.visit(&join(&p, &format!("self.{}", factor_name(*kind))), f);
                }
                combined.visit(&join(&p, "self.all"), f);
                leaf(&p, "w_o", w_o, f);
            }
            Extractor::Rnn(r) => r.visit(&join(prefix, "rnn"), f),
            Extractor::Lstm(l) => l.visit(&join(prefix, "lstm"), f),
            Extractor::Ffn(p) => p.visit(&join(prefix, "ffn"), f),
            Extractor::Resnet { input, blocks } => {
                let p = join(prefix, "resnet");
                input.visit(&join(&p, "input"), f);
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&join(&p, &format!("block{i}")), f);
                }
            }
            Extractor::MultiHead {
                input,
                attention,
                norm,
            } => {
                let p = join(prefix, "multi_head");
                input.visit(&join(&p, "input"), f);
                attention.visit(&join(&p, "attention"), f);
                norm.visit(&join(&p, "norm"), f);
            }
        }
    }
}

impl<T> Network<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Network<U> {
        Network {
            trunk: self.trunk.map(f),
            extractor: self.extractor.map(f),
        }
    }
}

impl<T> Visit<T> for Network<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        self.trunk.visit(&join(prefix, "trunk"), f);
        self.extractor.visit(prefix, f);
    }
}

fn global_width(cfg: &ModelConfig) -> usize {
    cfg.driver_embed + cfg.day_embed + cfg.slice_embed
}

impl Network<Tensor> {
    fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d_f = cfg.d_factor;
        let n = FactorKind::ALL.len();
        let front = |d_in: usize, rng: &mut R| {
            let mut widths = vec![d_in];
            widths.extend(std::iter::repeat_n(d_f, cfg.ffn_depth));
            FfnParams::init(&widths, true, rng)
        };
        let link_embedding = Tensor::xavier(cfg.n_links, cfg.link_embed, rng);
        let factor_ffns = FactorKind::ALL
            .iter()
            .map(|k| front(if k.is_categorical() { cfg.link_embed } else { 1 }, rng))
            .collect::<Result<Vec<_>>>()?;
        let driver_embedding = Tensor::xavier(cfg.n_drivers, cfg.driver_embed, rng);
        let day_embedding = Tensor::xavier(DAYS_PER_WEEK, cfg.day_embed, rng);
        let slice_embedding = Tensor::xavier(SLICES_PER_DAY, cfg.slice_embed, rng);

        let seq_width = n * d_f;
        let d = cfg.d_model;
        let extractor = match cfg.variant {
            Variant::Fma => {
                let mut widths = vec![seq_width];
                widths.extend(std::iter::repeat_n(seq_width, cfg.ffn_depth));
                Extractor::Fma {
                    combined_ffn: FfnParams::init(&widths, true, rng)?,
                    factors: (0..n).map(|_| AttentionBlockParams::init(d_f, d_f, rng)).collect(),
                    combined: AttentionBlockParams::init(seq_width, d_f, rng),
                    w_o: Tensor::xavier(2 * seq_width, d, rng),
                }
            }
            Variant::WdrRnn => Extractor::Rnn(RnnParams::init(seq_width, d, rng)),
            Variant::WdrLstm => Extractor::Lstm(LstmParams::init(seq_width, d, rng)),
            Variant::WdFfn => {
                let mut widths = vec![seq_width];
                widths.extend(std::iter::repeat_n(d, cfg.ffn_depth + 1));
                Extractor::Ffn(FfnParams::init(&widths, true, rng)?)
            }
            Variant::WdResnet => Extractor::Resnet {
                input: DenseLayer::init(seq_width, d, true, rng),
                blocks: (0..cfg.ffn_depth)
                    .map(|_| FfnParams::init(&[d, d, d], false, rng))
                    .collect::<Result<Vec<_>>>()?,
            },
            Variant::MultiHead => Extractor::MultiHead {
                input: DenseLayer::init(seq_width, d, false, rng),
                attention: MultiHeadParams::init(d, cfg.heads, rng)?,
                norm: NormParams::init(d),
            },
            Variant::RouteEta => unreachable!("route_eta has no network"),
        };

        let mut widths = vec![d + global_width(cfg)];
        widths.extend(std::iter::repeat_n(cfg.d_hidden, cfg.ffn_depth));
        let final_ffn = FfnParams::init(&widths, true, rng)?;
        let mut regressor = DenseLayer::init(cfg.d_hidden, 1, true, rng);
        regressor.bias = Tensor::full(vec![1], 1.0);
        Ok(Self {
            trunk: Trunk {
                link_embedding,
                factor_ffns,
                driver_embedding,
                day_embedding,
                slice_embedding,
                final_ffn,
                regressor,
            },
            extractor,
        })
    }
}

/// Handles produced by [`EtaModel::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[1×1]` predicted travel time in seconds.
    pub prediction: Var,
    /// One handle per entry of [`EtaModel::parameters`], in the same order.
    pub params: Vec<Var>,
}

/// A configured network with its named parameters and the training-set
/// statistics it was fitted with.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaModel {
    config: ModelConfig,
    normalization: Normalization,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Option<Network<usize>>,
}

impl EtaModel {
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        normalization: Normalization,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if !config.variant.is_learned() {
            return Ok(Self {
                config,
                normalization,
                names: Vec::new(),
                tensors: Vec::new(),
                layout: None,
            });
        }
        let net = Network::init(&config, rng)?;
        let mut tensors = Vec::new();
        let layout = net.map(&mut |t| {
            tensors.push(t.clone());
            tensors.len() - 1
        });
        let mut names = vec![String::new(); tensors.len()];
        layout.visit("", &mut |name, &i| names[i] = name);
        debug_assert!({
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            sorted.len() == names.len() && names.iter().all(|n| !n.is_empty())
        });
        Ok(Self {
            config,
            normalization,
            names,
            tensors,
            layout: Some(layout),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, normalization: Normalization) {
        self.normalization = normalization;
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Replaces every parameter, checking names and shapes.
    pub(crate) fn replace_parameters(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.names.len(),
                named.len()
            )));
        }
        let mut fresh = self.tensors.clone();
        for (name, tensor) in named {
            let i = self
                .index_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name:?}")))?;
            if fresh[i].shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    fresh[i].shape()
                )));
            }
            fresh[i] = tensor;
        }
        self.tensors = fresh;
        Ok(())
    }

    /// Puts every parameter on `tape`; `trainable` decides whether
    /// gradients flow into them.
    pub fn bind_parameters<'p>(&'p self, tape: &mut Tape<'p>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param_ref(t)
                } else {
                    tape.constant_ref(t)
                }
            })
            .collect()
    }

    /// Records one trip's forward pass with trainable parameters. Dropout
    /// is active only when `training` is set.
    pub fn forward<'p, R: Rng + ?Sized>(
        &'p self,
        tape: &mut Tape<'p>,
        trip: &TripFeatures,
        training: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let params = self.bind_parameters(tape, true);
        let prediction = self.forward_with(tape, &params, trip, training, rng)?;
        Ok(Forward { prediction, params })
    }

    /// Forward pass over parameters already bound to `tape`, in
    /// [`EtaModel::parameters`] order.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        params: &[Var],
        trip: &TripFeatures,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let Some(layout) = &self.layout else {
            let seconds = self.route_seconds(trip)?;
            return Ok(tape.constant(Tensor::matrix(1, 1, vec![seconds])?));
        };
        if params.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "{} parameter handles for {} parameters",
                params.len(),
                self.tensors.len()
            )));
        }
        let net = layout.map(&mut |&i| params[i]);
        let mask = trip.mask();
        let factors = self.front(tape, &net.trunk, trip)?;
        let dropout = Dropout::new(self.config.dropout_rate, training);
        let summary = self.extract(tape, &net.extractor, &factors, mask, dropout, rng)?;

        let g = trip.global();
        let driver = tape.embedding(net.trunk.driver_embedding, &[g.driver_id])?;
        let day = tape.embedding(net.trunk.day_embedding, &[g.day_of_week])?;
        let slice = tape.embedding(net.trunk.slice_embedding, &[g.departure_slice])?;
        let joined = tape.concat_cols(&[summary, driver, day, slice])?;
        let hidden = ffn_forward(tape, joined, &net.trunk.final_ffn)?;
        let rate = ffn_forward(
            tape,
            hidden,
            &FfnParams {
                layers: vec![net.trunk.regressor.clone()],
            },
        )?;
        let scale = trip.real_len() as f64 * self.normalization.seconds_per_link;
        let seconds = tape.scale(rate, scale);
        Ok(seconds)
    }

    fn route_seconds(&self, trip: &TripFeatures) -> Result<f64> {
        let real = trip.unpadded();
        route_eta(
            real.numeric(FactorKind::LinkLengthM),
            real.numeric(FactorKind::ConditionSpeedMps),
            &[],
        )
    }

    /// Per-factor front FFN outputs, each `[T×d_factor]`.
    fn front(&self, tape: &mut Tape<'_>, trunk: &Trunk<Var>, trip: &TripFeatures) -> Result<Vec<Var>> {
        let t = trip.len();
        let mut out = Vec::with_capacity(FactorKind::ALL.len());
        for (kind, ffn) in FactorKind::ALL.iter().zip(&trunk.factor_ffns) {
            let input = if kind.is_categorical() {
                tape.embedding(trunk.link_embedding, trip.link_ids())?
            } else {
                let m = self.normalization.moments(*kind);
                let z = trip.numeric(*kind).iter().map(|&v| m.z(v)).collect();
                tape.constant(Tensor::matrix(t, 1, z)?)
            };
            out.push(ffn_forward(tape, input, ffn)?);
        }
        Ok(out)
    }

    /// Sequence summary `[1×d_model]`.
    fn extract<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        extractor: &Extractor<Var>,
        factors: &[Var],
        mask: &[bool],
        dropout: Dropout,
        rng: &mut R,
    ) -> Result<Var> {
        let joined = tape.concat_cols(factors)?;
        match extractor {
            Extractor::Fma {
                combined_ffn,
                factors: blocks,
                combined,
                w_o,
            } => {
                let mut pooled = Vec::with_capacity(factors.len() + 1);
                for (&factor, block) in factors.iter().zip(blocks) {
                    let s = attention_block(tape, factor, block, mask, dropout, rng)?;
                    pooled.push(pool_sequence(tape, s, mask)?);
                }
                let factor_c = ffn_forward(tape, joined, combined_ffn)?;
                let s_all = attention_block(tape, factor_c, combined, mask, dropout, rng)?;
                pooled.push(pool_sequence(tape, s_all, mask)?);
                let streams = tape.concat_cols(&pooled)?;
                Ok(tape.matmul(streams, *w_o)?)
            }
            Extractor::Rnn(p) => Ok(rnn_forward(tape, joined, p, mask)?.last),
            Extractor::Lstm(p) => Ok(lstm_forward(tape, joined, p, mask)?.last),
            Extractor::Ffn(p) => {
                let h = ffn_forward(tape, joined, p)?;
                pool_sequence(tape, h, mask)
            }
            Extractor::Resnet { input, blocks } => {
                let mut h = ffn_forward(tape, joined, &FfnParams { layers: vec![input.clone()] })?;
                for block in blocks {
                    let r = ffn_forward(tape, h, block)?;
                    h = tape.add(h, r)?;
                }
                pool_sequence(tape, h, mask)
            }
            Extractor::MultiHead {
                input,
                attention,
                norm,
            } => {
                let h = ffn_forward(tape, joined, &FfnParams { layers: vec![input.clone()] })?;
                let h = multi_head_block(tape, h, attention, norm, mask, dropout, rng)?;
                pool_sequence(tape, h, mask)
            }
        }
    }

    /// Inference in evaluation mode.
    pub fn predict(&self, trip: &TripFeatures) -> Result<f64> {
        if self.layout.is_none() {
            return self.route_seconds(trip);
        }
        let mut tape = Tape::new();
        let params = self.bind_parameters(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_with(&mut tape, &params, trip, false, &mut rng)?;
        Ok(tape.value(out).data()[0])
    }
}

/// Total number of parameter elements.
pub fn count_parameters(model: &EtaModel) -> usize {
    model.parameters().iter().map(Tensor::numel).sum()
}

pub(crate) fn config_parameter_count(config: &ModelConfig) -> Result<usize> {
    let model = EtaModel::new(config.clone(), Normalization::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(count_parameters(&model))
}
