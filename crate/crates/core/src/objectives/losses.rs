use super::PROB_FLOOR;
use crate::error::{DartError, Result};
use crate::tensor::{Graph, Var};

/// `-log scores[gold]` for a `[1 × n]` class distribution.
pub fn class_discrimination_loss(g: &mut Graph, scores: Var, gold: usize) -> Result<Var> {
    let n = g.shape(scores).last().copied().unwrap_or(0);
    if gold >= n {
        return Err(DartError::Index {
            what: "gold class",
            index: gold,
            bound: n,
        });
    }
    let p = g.pick_per_row(scores, &[gold])?;
    let logp = g.log_floor(p, PROB_FLOOR);
    let s = g.sum(logp);
    Ok(g.scale(s, -1.0))
}

/// `lc + lambda * lf`; with `lambda == 0` this is `lc` itself.
pub fn total_loss(g: &mut Graph, lc: Var, lf: Var, lambda: f32) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(lc);
    }
    let weighted = g.scale(lf, lambda);
    g.add(lc, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn loss_of(scores: &[f32], gold: usize) -> f32 {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, scores.len()], scores.to_vec()).unwrap());
        let l = class_discrimination_loss(&mut g, s, gold).unwrap();
        g.value(l).item()
    }

    #[test]
    fn closed_forms() {
        assert_eq!(loss_of(&[1.0, 0.0], 0), 0.0);
        assert!((loss_of(&[0.5, 0.5], 1) - std::f32::consts::LN_2).abs() < 1e-7);
        assert!((loss_of(&[1.0, 0.0], 1) - 1e-12f32.ln().abs()).abs() < 1e-3);
    }

    #[test]
    fn batch_mean_is_mean_of_losses() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![1, 2], vec![0.3, 0.7]).unwrap());
        let b = g.constant(Tensor::new(vec![1, 2], vec![0.9, 0.1]).unwrap());
        let la = class_discrimination_loss(&mut g, a, 1).unwrap();
        let lb = class_discrimination_loss(&mut g, b, 0).unwrap();
        let m = g.mean_of(&[la, lb]).unwrap();
        let expected = (g.value(la).item() + g.value(lb).item()) / 2.0;
        assert!((g.value(m).item() - expected).abs() < 1e-7);
    }

    #[test]
    fn gold_out_of_range() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap());
        assert!(matches!(
            class_discrimination_loss(&mut g, s, 2),
            Err(DartError::Index { .. })
        ));
    }

    #[test]
    fn total_closed_form_and_zero_lambda() {
        let mut g = Graph::new();
        let lc = g.constant(Tensor::scalar(1.0));
        let lf = g.constant(Tensor::scalar(2.0));
        let t = total_loss(&mut g, lc, lf, 0.5).unwrap();
        assert_eq!(g.value(t).item(), 2.0);
        let z = total_loss(&mut g, lc, lf, 0.0).unwrap();
        assert_eq!(z, lc);
    }
}
