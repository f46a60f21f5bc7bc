use crate::error::{Error, Result};

/// `Σ length_i / speed_i + Σ delay_j` in seconds.
///
/// `delays_s` holds one entry per interior intersection (`links − 1`); an
/// empty slice means no delays.
pub fn route_eta(lengths_m: &[f64], speeds_mps: &[f64], delays_s: &[f64]) -> Result<f64> {
    if lengths_m.len() != speeds_mps.len() {
        return Err(Error::Alignment(vec![lengths_m.len(), speeds_mps.len()]));
    }
    if lengths_m.is_empty() {
        return Err(Error::Domain("a route needs at least one link".into()));
    }
    if !delays_s.is_empty() && delays_s.len() + 1 != lengths_m.len() {
        return Err(Error::Alignment(vec![lengths_m.len() - 1, delays_s.len()]));
    }
    let mut total = 0.0;
    for (&length, &speed) in lengths_m.iter().zip(speeds_mps) {
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(Error::Domain(format!("link speed must be positive, got {speed}")));
        }
        total += length / speed;
    }
    Ok(total + delays_s.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_links_with_one_delay() {
        assert_eq!(route_eta(&[1000.0, 2000.0], &[10.0, 20.0], &[5.0]).unwrap(), 205.0);
    }

    #[test]
    fn single_link_and_missing_delays() {
        assert_eq!(route_eta(&[150.0], &[10.0], &[]).unwrap(), 15.0);
        assert_eq!(route_eta(&[100.0, 100.0], &[10.0, 10.0], &[]).unwrap(), 20.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(route_eta(&[1.0], &[0.0], &[]), Err(Error::Domain(_))));
        assert!(matches!(route_eta(&[1.0], &[-2.0], &[]), Err(Error::Domain(_))));
        assert!(matches!(route_eta(&[1.0, 2.0], &[1.0], &[]), Err(Error::Alignment(_))));
        assert!(matches!(
            route_eta(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0]),
            Err(Error::Alignment(_))
        ));
    }
}
