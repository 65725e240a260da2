use crate::error::{Error, Result};

/// Two curve points (indices into the caller's curve) and the weight of the upper one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lower: usize,
    pub upper: usize,
    pub t: f64,
}

impl Bracket {
    pub fn apply(&self, values: &[f64]) -> f64 {
        values[self.lower] + self.t * (values[self.upper] - values[self.lower])
    }
}

/// Locate `target_accuracy` on a `(accuracy, density)` curve.
///
/// Points are ordered by density; among consecutive pairs whose accuracies
/// bracket the target, the lowest-density pair wins. An exact accuracy match
/// returns that point (the lowest-density one if several match).
pub fn bracket_at_accuracy(curve: &[(f64, f64)], target_accuracy: f64) -> Result<Bracket> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument(
            "interpolation needs at least two curve points".into(),
        ));
    }
    if curve.iter().any(|(a, d)| !a.is_finite() || !d.is_finite()) || !target_accuracy.is_finite() {
        return Err(Error::InvalidArgument(
            "curve contains non-finite values".into(),
        ));
    }
    let (min, max) = curve
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(a, _)| {
            (lo.min(a), hi.max(a))
        });
    if target_accuracy < min || target_accuracy > max {
        return Err(Error::Extrapolation {
            target: target_accuracy,
            min,
            max,
        });
    }
    let mut order: Vec<usize> = (0..curve.len()).collect();
    order.sort_by(|&a, &b| {
        curve[a]
            .1
            .total_cmp(&curve[b].1)
            .then(curve[a].0.total_cmp(&curve[b].0))
            .then(a.cmp(&b))
    });
    if let Some(&i) = order.iter().find(|&&i| curve[i].0 == target_accuracy) {
        return Ok(Bracket {
            lower: i,
            upper: i,
            t: 0.0,
        });
    }
    for pair in order.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let (a0, a1) = (curve[lo].0, curve[hi].0);
        if (a0 < target_accuracy && target_accuracy < a1)
            || (a1 < target_accuracy && target_accuracy < a0)
        {
            return Ok(Bracket {
                lower: lo,
                upper: hi,
                t: (target_accuracy - a0) / (a1 - a0),
            });
        }
    }
    unreachable!("target within accuracy range is always bracketed")
}

/// Linearly interpolated density at `target_accuracy`.
pub fn interpolate_at_accuracy(curve: &[(f64, f64)], target_accuracy: f64) -> Result<f64> {
    let b = bracket_at_accuracy(curve, target_accuracy)?;
    let densities: Vec<f64> = curve.iter().map(|&(_, d)| d).collect();
    Ok(b.apply(&densities))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint() {
        let d = interpolate_at_accuracy(&[(0.80, 0.2), (0.90, 0.4)], 0.85).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn exact_point() {
        let curve = [(0.80, 0.2), (0.90, 0.4), (0.95, 0.7)];
        assert_eq!(interpolate_at_accuracy(&curve, 0.90).unwrap(), 0.4);
        assert_eq!(interpolate_at_accuracy(&curve, 0.80).unwrap(), 0.2);
    }

    #[test]
    fn refuses_extrapolation() {
        let curve = [(0.80, 0.2), (0.90, 0.4)];
        assert!(matches!(
            interpolate_at_accuracy(&curve, 0.79),
            Err(Error::Extrapolation { .. })
        ));
        assert!(interpolate_at_accuracy(&curve, 0.91).is_err());
        assert!(interpolate_at_accuracy(&curve[..1], 0.8).is_err());
    }

    #[test]
    fn non_monotone_curve_uses_lowest_density_crossing() {
        // accuracy rises then dips as density grows
        let curve = [(0.90, 0.6), (0.70, 0.1), (0.92, 0.4), (0.80, 0.2)];
        // density order: 0.1 (0.70), 0.2 (0.80), 0.4 (0.92), 0.6 (0.90)
        let d = interpolate_at_accuracy(&curve, 0.91).unwrap();
        assert!((d - (0.2 + 0.2 * (0.11 / 0.12))).abs() < 1e-12);
    }

    #[test]
    fn bracket_applies_to_other_columns() {
        let curve = [(0.80, 0.2), (0.90, 0.4)];
        let b = bracket_at_accuracy(&curve, 0.825).unwrap();
        assert!((b.apply(&[0.3, 0.5]) - 0.35).abs() < 1e-12);
    }
}
