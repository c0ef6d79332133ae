use serde::{Deserialize, Serialize};

use crate::error::{DartError, Result};
use crate::objectives::TrainConfig;

/// Candidate values per hyperparameter. A missing axis keeps the method's
/// base value; a present axis must be non-empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_lr: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<Vec<usize>>,
}

fn axis<T: Copy>(values: &Option<Vec<T>>, base: T) -> Vec<T> {
    values.clone().unwrap_or_else(|| vec![base])
}

impl GridSpace {
    pub fn axis_count(&self) -> usize {
        [
            self.lr.is_some(),
            self.prompt_lr.is_some(),
            self.weight_decay.is_some(),
            self.batch_size.is_some(),
            self.lambda.is_some(),
            self.epochs.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }

    pub fn validate(&self) -> Result<()> {
        let lens = [
            ("lr", self.lr.as_ref().map(Vec::len)),
            ("prompt_lr", self.prompt_lr.as_ref().map(Vec::len)),
            ("weight_decay", self.weight_decay.as_ref().map(Vec::len)),
            ("batch_size", self.batch_size.as_ref().map(Vec::len)),
            ("lambda", self.lambda.as_ref().map(Vec::len)),
            ("epochs", self.epochs.as_ref().map(Vec::len)),
        ];
        if let Some((name, _)) = lens.iter().find(|(_, l)| *l == Some(0)) {
            return Err(DartError::Config(format!("grid axis `{name}` is empty")));
        }
        Ok(())
    }

    /// Cartesian product over `base`, in the fixed order lr, prompt_lr,
    /// weight_decay, batch_size, lambda, epochs (last axis varies fastest).
    pub fn points(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        self.validate()?;
        let mut out = Vec::new();
        for lr in axis(&self.lr, base.full_lr) {
            for plr in axis(&self.prompt_lr, base.prompt_lr) {
                for wd in axis(&self.weight_decay, base.weight_decay) {
                    for bs in axis(&self.batch_size, base.batch_size) {
                        for lambda in axis(&self.lambda, base.lambda) {
                            for epochs in axis(&self.epochs, base.epochs) {
                                let c = TrainConfig {
                                    full_lr: lr,
                                    prompt_lr: plr,
                                    weight_decay: wd,
                                    batch_size: bs,
                                    lambda,
                                    epochs,
                                    ..base.clone()
                                };
                                c.validate()?;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_single_base_point() {
        let base = TrainConfig::default();
        assert_eq!(GridSpace::default().points(&base).unwrap(), vec![base]);
    }

    #[test]
    fn product_order_is_fixed() {
        let g: GridSpace = serde_json::from_str(r#"{"lr":[1e-5,5e-5,1e-4,2e-4],"lambda":[0.1,0.5,1.0]}"#).unwrap();
        let p = g.points(&TrainConfig::default()).unwrap();
        assert_eq!(p.len(), 12);
        assert_eq!((p[0].full_lr, p[0].lambda), (1e-5, 0.1));
        assert_eq!((p[1].full_lr, p[1].lambda), (1e-5, 0.5));
        assert_eq!((p[11].full_lr, p[11].lambda), (2e-4, 1.0));
        assert_eq!(g.axis_count(), 2);
    }

    #[test]
    fn empty_axis_and_unknown_key_rejected() {
        let g: GridSpace = serde_json::from_str(r#"{"lr":[]}"#).unwrap();
        assert!(matches!(g.points(&TrainConfig::default()), Err(DartError::Config(_))));
        assert!(serde_json::from_str::<GridSpace>(r#"{"momentum":[0.9]}"#).is_err());
    }
}
