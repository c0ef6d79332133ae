//! Central finite-difference checks for the graph primitives and for whole
//! model losses.
//!
//! Error is measured normwise per input tensor:
//! `max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::mlm::{build_vocab, MlmConfig, TokenId, ToyMlmModel};

pub const STEP: f32 = 1e-3;

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub error: f32,
}

pub fn normwise_error(analytic: &[f32], numeric: &[f32]) -> f32 {
    let scale = analytic.iter().chain(numeric).fold(0.0f32, |m, v| m.max(v.abs()));
    let err = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f32, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        0.0
    } else {
        err / scale
    }
}

pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Builds `sum(weights ⊙ f(inputs))` so every output element contributes.
fn projected_loss(
    inputs: &[Tensor],
    weights: &Tensor,
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    requires_grad: bool,
) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), requires_grad)).collect();
    let out = f(&mut g, &vars);
    let w = g.constant(weights.clone());
    let out_shape = g.shape(out).to_vec();
    let w = g.reshape(w, &out_shape).expect("weights sized to output");
    let prod = g.mul(out, w).expect("same shape");
    let loss = g.sum(prod);
    (g, vars, loss)
}

/// Worst normwise error over all inputs of `f`.
pub fn check_op(inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f32 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), false)).collect();
        let out = f(&mut g, &vars);
        g.shape(out).to_vec()
    };
    let weights = random_tensor(&mut rng, &[probe.iter().product()]);

    let (mut g, vars, loss) = projected_loss(&inputs, &weights, f, true);
    g.backward(loss).expect("scalar loss");
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| g.grad(v).map_or(vec![0.0; t.numel()], <[f32]>::to_vec))
        .collect();

    let eval = |ins: &[Tensor]| -> f32 {
        let (g, _, loss) = projected_loss(ins, &weights, f, false);
        g.value(loss).item()
    };

    let mut worst = 0.0f32;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        }
        worst = worst.max(normwise_error(&analytic[k], &numeric));
    }
    worst
}

/// One case per differentiable primitive, with fixed random inputs.
pub fn primitive_cases() -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let a = random_tensor(&mut r, &[3, 4]);
    let b = random_tensor(&mut r, &[3, 4]);
    let bias = random_tensor(&mut r, &[4]);
    let lhs = random_tensor(&mut r, &[4, 5]);
    let rhs = random_tensor(&mut r, &[5, 3]);
    let rhs_t = random_tensor(&mut r, &[3, 5]);
    let row = random_tensor(&mut r, &[1, 7]);
    let ln = [
        random_tensor(&mut r, &[3, 8]),
        random_tensor(&mut r, &[8]),
        random_tensor(&mut r, &[8]),
    ];
    let table = random_tensor(&mut r, &[6, 4]);
    let logits = random_tensor(&mut r, &[2, 5]);
    vec![
        (
            "matmul",
            vec![lhs.clone(), rhs],
            Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
        ),
        (
            "matmul_nt",
            vec![lhs, rhs_t],
            Box::new(|g, v| g.matmul_nt(v[0], v[1]).unwrap()),
        ),
        (
            "softmax_rows",
            vec![row],
            Box::new(|g, v| g.softmax_rows(v[0]).unwrap()),
        ),
        (
            "layer_norm",
            ln.to_vec(),
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
        ),
        (
            "gather",
            vec![table],
            Box::new(|g, v| g.gather(v[0], &[4, 1, 4, 0]).unwrap()),
        ),
        (
            "add",
            vec![a.clone(), b.clone()],
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
        ),
        (
            "add_row",
            vec![a.clone(), bias],
            Box::new(|g, v| g.add_row(v[0], v[1]).unwrap()),
        ),
        ("scale", vec![a.clone()], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("gelu", vec![a.clone()], Box::new(|g, v| g.gelu(v[0]))),
        ("tanh", vec![a.clone()], Box::new(|g, v| g.tanh(v[0]))),
        (
            "slice_cols",
            vec![a.clone()],
            Box::new(|g, v| g.slice_cols(v[0], 1, 2).unwrap()),
        ),
        (
            "concat_cols",
            vec![a.clone(), b.clone()],
            Box::new(|g, v| g.concat_cols(&[v[0], v[1]]).unwrap()),
        ),
        (
            "select_cols",
            vec![a.clone()],
            Box::new(|g, v| g.select_cols(v[0], &[3, 0, 3]).unwrap()),
        ),
        ("mean", vec![a.clone()], Box::new(|g, v| g.mean(v[0]))),
        ("sum", vec![a.clone()], Box::new(|g, v| g.sum(v[0]))),
        (
            "reshape",
            vec![a.clone()],
            Box::new(|g, v| g.reshape(v[0], &[2, 6]).unwrap()),
        ),
        (
            "pick_per_row",
            vec![a.clone()],
            Box::new(|g, v| g.pick_per_row(v[0], &[2, 0, 2]).unwrap()),
        ),
        (
            "add_n",
            vec![a.clone(), b.clone()],
            Box::new(|g, v| g.add_n(&[v[0], v[1], v[0]]).unwrap()),
        ),
        (
            "mean_of",
            vec![a, b],
            Box::new(|g, v| g.mean_of(&[v[0], v[1]]).unwrap()),
        ),
        // Softmax outputs keep normalize/log away from their singularities.
        (
            "normalize_rows+log_floor",
            vec![logits],
            Box::new(|g, v| {
                let p = g.softmax_rows(v[0]).unwrap();
                let sel = g.select_cols(p, &[1, 3]).unwrap();
                let q = g.normalize_rows(sel).unwrap();
                g.log_floor(q, 1e-12)
            }),
        ),
    ]
}

pub fn primitive_suite() -> Vec<CheckReport> {
    primitive_cases()
        .into_iter()
        .map(|(name, inputs, f)| CheckReport {
            name: name.to_string(),
            error: check_op(inputs, f.as_ref()),
        })
        .collect()
}

/// 2-layer, d=16 masked LM over a six-word vocabulary with four reserved
/// slots. Unit-order weights keep every gradient well above f32 round-off.
pub fn tiny_model() -> ToyMlmModel {
    let vocab = build_vocab(&["[UNK]", "a", "b", "c", "d", "e"], 4).expect("valid vocabulary");
    let cfg = MlmConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        max_len: 10,
        d_ff: 32,
        ln_eps: 1e-5,
        init_std: 0.3,
    };
    ToyMlmModel::new(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(11)).expect("valid config")
}

/// Per-parameter normwise error of `loss` against central differences.
pub fn check_model_loss(model: &ToyMlmModel, loss: &dyn Fn(&ToyMlmModel, &mut Graph) -> Var) -> Vec<CheckReport> {
    let mut g = Graph::new();
    let l = loss(model, &mut g);
    g.backward(l).expect("scalar loss");
    let mut analytic = model.params().clone();
    analytic.zero_grad();
    g.accumulate_param_grads(&mut analytic);

    let eval = |store: &ParamStore| -> f32 {
        let mut m = model.clone();
        *m.params_mut() = store.clone();
        let mut g = Graph::new();
        let l = loss(&m, &mut g);
        g.value(l).item()
    };

    let base = model.params().clone();
    let mut out = Vec::new();
    for (id, p) in base.iter() {
        let a = analytic
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; p.value.numel()]);
        let mut numeric = vec![0.0f32; p.value.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = base.clone();
            plus.value_mut(id).data_mut()[i] += STEP;
            let mut minus = base.clone();
            minus.value_mut(id).data_mut()[i] -= STEP;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        }
        out.push(CheckReport {
            name: p.name.clone(),
            error: normwise_error(&a, &numeric),
        });
    }
    out
}

pub const TINY_IDS: [TokenId; 7] = [1, 5, 3, 7, 3, 8, 2];
pub const TINY_TARGETS: [(usize, TokenId); 2] = [(2, 6), (4, 9)];

/// Masked-LM loss of the tiny model, every parameter checked.
pub fn model_suite() -> Vec<CheckReport> {
    let model = tiny_model();
    check_model_loss(&model, &|m, g| m.mlm_loss(g, &TINY_IDS, &TINY_TARGETS).unwrap())
}
