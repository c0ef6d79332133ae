use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};

/// [MASK]-position hidden states with their gold classes, optionally tagged
/// with the global step they were captured at.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledStates {
    pub step: Option<usize>,
    pub d: usize,
    pub classes: Vec<usize>,
    pub vectors: Vec<Vec<f32>>,
}

impl LabeledStates {
    pub fn new(step: Option<usize>, d: usize) -> Self {
        Self {
            step,
            d,
            classes: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn push(&mut self, class: usize, v: Vec<f32>) -> Result<()> {
        if v.len() != self.d {
            return Err(DartError::dims("LabeledStates::push", &[self.d], &[v.len()]));
        }
        self.classes.push(class);
        self.vectors.push(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vectors grouped by class, classes ascending.
    pub fn by_class(&self) -> BTreeMap<usize, Vec<&[f32]>> {
        let mut out: BTreeMap<usize, Vec<&[f32]>> = BTreeMap::new();
        for (c, v) in self.classes.iter().zip(&self.vectors) {
            out.entry(*c).or_default().push(v);
        }
        out
    }
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = f64::from(x) - f64::from(y);
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

fn mean_cross(a: &[&[f32]], b: &[&[f32]]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += dist(x, y);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Mean within-class distance over mean between-class distance. Each
/// class's double sum (i = j terms included) is divided by N_c², each
/// ordered class pair's sum by N_c1·N_c2.
pub fn rd_ratio(states: &LabeledStates) -> Result<f64> {
    let groups: Vec<Vec<&[f32]>> = states.by_class().into_values().collect();
    if groups.len() < 2 {
        return Err(DartError::Validation(format!(
            "R_D needs at least two classes, got {}",
            groups.len()
        )));
    }
    let intra = groups.iter().map(|g| mean_cross(g, g)).sum::<f64>() / groups.len() as f64;
    let mut inter = 0.0;
    let mut pairs = 0usize;
    for (i, a) in groups.iter().enumerate() {
        for (j, b) in groups.iter().enumerate() {
            if i != j {
                inter += mean_cross(a, b);
                pairs += 1;
            }
        }
    }
    inter /= pairs as f64;
    if inter == 0.0 {
        return Err(DartError::Numeric("R_D: mean inter-class distance is zero".into()));
    }
    Ok(intra / inter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states(points: &[(usize, [f32; 2])]) -> LabeledStates {
        let mut s = LabeledStates::new(None, 2);
        for (c, p) in points {
            s.push(*c, p.to_vec()).unwrap();
        }
        s
    }

    #[test]
    fn identical_within_class_is_zero() {
        let s = states(&[(0, [1.0, 1.0]), (0, [1.0, 1.0]), (1, [2.0, 0.0]), (1, [2.0, 0.0])]);
        assert_eq!(rd_ratio(&s).unwrap(), 0.0);
        let s = states(&[(0, [0.0, 0.0]), (1, [3.0, 4.0])]);
        assert_eq!(rd_ratio(&s).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed() {
        // class 0: (0,0),(2,0) -> pairwise mean 4/4 = 1; class 1: (0,10) -> 0
        // inter: d((0,0),(0,10)) = 10, d((2,0),(0,10)) = sqrt(104)
        let s = states(&[(0, [0.0, 0.0]), (0, [2.0, 0.0]), (1, [0.0, 10.0])]);
        let inter = (10.0 + 104f64.sqrt()) / 2.0;
        assert!((rd_ratio(&s).unwrap() - 0.5 / inter).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let s = states(&[(0, [0.0, 0.0]), (0, [1.0, 0.0])]);
        assert!(matches!(rd_ratio(&s), Err(DartError::Validation(_))));
        let s = states(&[(0, [1.0, 0.0]), (1, [1.0, 0.0])]);
        assert!(matches!(rd_ratio(&s), Err(DartError::Numeric(_))));
        assert!(LabeledStates::new(None, 3).push(0, vec![1.0]).is_err());
    }
}
