use crate::error::{Error, Result};

/// Weighted least-squares nondecreasing fit by pool-adjacent-violators.
pub fn pava_isotonic(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::invalid("values and weights differ in length"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("PAVA weights must be positive"));
    }
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            let (m2, w2, l2) = blocks[n - 1];
            let (m1, w1, l1) = blocks[n - 2];
            if m1 <= m2 {
                break;
            }
            let w = w1 + w2;
            blocks.truncate(n - 2);
            blocks.push(((m1 * w1 + m2 * w2) / w, w, l1 + l2));
        }
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(
            pava_isotonic(&[0.2, 0.1, 0.3], &[1.0; 3]).unwrap(),
            vec![0.15000000000000002, 0.15000000000000002, 0.3]
        );
        assert_eq!(pava_isotonic(&[0.1, 0.2, 0.4], &[1.0, 2.0, 3.0]).unwrap(), vec![0.1, 0.2, 0.4]);
        assert_eq!(pava_isotonic(&[0.3; 4], &[1.0; 4]).unwrap(), vec![0.3; 4]);
        assert!(pava_isotonic(&[0.1], &[0.0]).is_err());
        assert!(pava_isotonic(&[0.1, 0.2], &[1.0]).is_err());
    }
}
