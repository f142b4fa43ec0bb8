use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }

    /// Loss and its gradient with respect to each prediction.
    pub fn eval(self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::Mse => mse_loss(pred, target),
            LossKind::Mae => mae_loss(pred, target),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::invalid("loss", format!("unknown loss {other:?}"))),
        }
    }
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "loss",
            expected: pred.len(),
            actual: target.len(),
        });
    }
    Ok(())
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean absolute error; the subgradient is 0 where prediction equals target.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_is_zero() {
        for k in [LossKind::Mse, LossKind::Mae] {
            let (l, g) = k.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap();
            assert_eq!(l, 0.0);
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_offsets() {
        assert_eq!(mse_loss(&[1.0, -1.0], &[0.0, 0.0]).unwrap().0, 1.0);
        let (l, g) = mae_loss(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g, vec![0.5, -0.5]);
    }

    #[test]
    fn mse_gradient_matches_differences() {
        let pred = [0.2, -0.7, 1.3, 0.05];
        let target = [0.1, 0.4, 1.0, -0.2];
        let (_, g) = mse_loss(&pred, &target).unwrap();
        let h = 1e-6;
        for k in 0..pred.len() {
            let mut up = pred;
            let mut dn = pred;
            up[k] += h;
            dn[k] -= h;
            let num = (mse_loss(&up, &target).unwrap().0 - mse_loss(&dn, &target).unwrap().0) / (2.0 * h);
            assert!((num - g[k]).abs() < 1e-8, "{num} vs {}", g[k]);
        }
    }

    #[test]
    fn errors() {
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mae_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!("huber".parse::<LossKind>().is_err());
        assert_eq!("MAE".parse::<LossKind>().unwrap(), LossKind::Mae);
    }
}
