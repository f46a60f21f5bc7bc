//! Naming of parameter records.

use crate::nn::{
    AttentionBlockParams, AttentionParams, DenseLayer, FfnParams, LstmParams, MultiHeadParams,
    NormParams, RnnParams,
};

/// Walks every leaf of a parameter record with a dotted name.
pub(crate) trait Visit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn leaf<T>(prefix: &str, name: &str, value: &T, f: &mut dyn FnMut(String, &T)) {
    f(join(prefix, name), value);
}

impl<T> Visit<T> for DenseLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        leaf(prefix, "weight", &self.weight, f);
        leaf(prefix, "bias", &self.bias, f);
    }
}

impl<T> Visit<T> for FfnParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T> Visit<T> for AttentionParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        leaf(prefix, "w_q", &self.w_q, f);
        leaf(prefix, "w_k", &self.w_k, f);
        leaf(prefix, "w_v", &self.w_v, f);
    }
}

impl<T> Visit<T> for NormParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        leaf(prefix, "gamma", &self.gamma, f);
        leaf(prefix, "beta", &self.beta, f);
    }
}

impl<T> Visit<T> for AttentionBlockParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

impl<T> Visit<T> for MultiHeadParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        for (i, head) in self.heads.iter().enumerate() {
            head.visit(&join(prefix, &format!("head{i}")), f);
        }
        leaf(prefix, "w_o", &self.w_o, f);
    }
}

impl<T> Visit<T> for LstmParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        leaf(prefix, "w_x", &self.w_x, f);
        leaf(prefix, "w_h", &self.w_h, f);
        leaf(prefix, "bias", &self.bias, f);
    }
}

impl<T> Visit<T> for RnnParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &T)) {
        leaf(prefix, "w_x", &self.w_x, f);
        leaf(prefix, "w_h", &self.w_h, f);
        leaf(prefix, "bias", &self.bias, f);
    }
}
