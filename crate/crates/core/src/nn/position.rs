use std::cell::RefCell;
use std::collections::HashMap;

use super::config_err;
use crate::error::Result;
use crate::tensor::Tensor;

thread_local! {
    // Widest table built so far for each model width.
    static TABLES: RefCell<HashMap<usize, Vec<f64>>> = RefCell::new(HashMap::new());
}

fn fill_rows(d: usize, from: usize, to: usize, out: &mut Vec<f64>) {
    for t in from..to {
        for i in 0..d / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
}

/// Fixed sinusoidal encoding `[t_max×d]`:
/// `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn positional_encoding(t_max: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(config_err(format!(
            "positional encoding width must be even and positive, got {d}"
        )));
    }
    if t_max == 0 {
        return Err(config_err("positional encoding needs at least one position"));
    }
    let data = TABLES.with(|cell| {
        let mut tables = cell.borrow_mut();
        let table = tables.entry(d).or_default();
        let have = table.len() / d;
        if have < t_max {
            fill_rows(d, have, t_max, table);
        }
        table[..t_max * d].to_vec()
    });
    Ok(Tensor::matrix(t_max, d, data)?)
}
