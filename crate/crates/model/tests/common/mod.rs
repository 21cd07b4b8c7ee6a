#![allow(dead_code)]

use dagnat_core::glancing::GlancingInput;
use dagnat_model::params::Grads;
use dagnat_model::tape::Objective;
use dagnat_model::train::sample_loss;
use dagnat_model::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn tiny_config(seed: u64, vocab: usize) -> ModelConfig {
    ModelConfig {
        model_dim: 8,
        num_heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 16,
        vocab_size: vocab,
        lambda: 2,
        max_source_len: 4,
        dropout: 0.0,
        seed,
    }
}

struct Case {
    source: Vec<usize>,
    target: Vec<usize>,
    glancing: Option<GlancingInput>,
    objective: Objective,
    smoothing: f64,
}

fn random_case(rng: &mut ChaCha8Rng, vocab: usize, max_src: usize) -> Case {
    let n = rng.random_range(2..=max_src);
    let source: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
    let l = 2 * n;
    let m = rng.random_range(2..=l);
    let target: Vec<usize> = (0..m).map(|_| rng.random_range(0..vocab)).collect();
    let glancing = rng.random_bool(0.5).then(|| {
        let z: Vec<Option<usize>> = (0..l)
            .map(|_| rng.random_bool(0.3).then(|| rng.random_range(0..vocab)))
            .collect();
        GlancingInput {
            revealed_count: z.iter().flatten().count(),
            z,
            assignment: None,
        }
    });
    Case {
        source,
        target,
        glancing,
        objective: if rng.random_bool(0.5) { Objective::Sum } else { Objective::Max },
        smoothing: if rng.random_bool(0.5) { 0.1 } else { 0.0 },
    }
}

fn loss(model: &Model, c: &Case) -> f64 {
    sample_loss(model, &c.source, &c.target, c.glancing.as_ref(), c.objective, c.smoothing, None, None).unwrap()
}

/// Central differences (step 1e-5) against the tape gradient for every scalar
/// parameter of a d=8, 1+1 layer network with graphs of at most 8 vertices.
pub fn network_gradient(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let tol = 1e-4;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for k in 0..instances {
        let vocab = rng.random_range(3..=6);
        let mut model = Model::init(tiny_config(seed + k as u64, vocab)).map_err(|e| e.to_string())?;
        let case = random_case(&mut rng, vocab, 4);
        let mut grads = Grads::zeros_like(&model.params);
        sample_loss(
            &model,
            &case.source,
            &case.target,
            case.glancing.as_ref(),
            case.objective,
            case.smoothing,
            None,
            Some((&mut grads, 1.0)),
        )
        .map_err(|e| e.to_string())?;
        for p in 0..model.params.len() {
            let shape = model.params.value(p).dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let g = grads.get(p)[[r, c]];
                    let orig = model.params.value(p)[[r, c]];
                    model.params.value_mut(p)[[r, c]] = orig + h;
                    let up = loss(&model, &case);
                    model.params.value_mut(p)[[r, c]] = orig - h;
                    let down = loss(&model, &case);
                    model.params.value_mut(p)[[r, c]] = orig;
                    let fd = (up - down) / (2.0 * h);
                    if g.abs().max(fd.abs()) <= 1e-8 {
                        continue;
                    }
                    let rel = (g - fd).abs() / g.abs().max(fd.abs());
                    worst = worst.max(rel);
                    checked += 1;
                    if rel > tol {
                        return Err(format!(
                            "instance {k}: {}[{r},{c}] analytic {g:e} vs numeric {fd:e} (rel {rel:e})",
                            model.params.name(p)
                        ));
                    }
                }
            }
        }
    }
    Ok(format!("{checked} coordinates over {instances} networks, max rel err {worst:.2e}"))
}
