use std::ops::ControlFlow;

use rand::rngs::StdRng;
use rand::SeedableRng;

use super::{evaluate, shuffled, Checkpoint, EpochMetrics, TrainConfig, TrainOutcome};
use crate::corpus::{is_projective, Sentence};
use crate::machine::{Action, Configuration, Machine, State};
use crate::neural::{supervised_gradient, FeatureVector, Gradients, Model, Optimizer};
use crate::oracle::{optimal_action, static_oracle, OracleError};
use crate::{Error, Result};

struct Example {
    features: FeatureVector,
    state: State,
    gold: usize,
}

/// Supervised training with cross-entropy: static-oracle sequences for the
/// first `static_epochs` epochs, then configurations visited by the model
/// itself, labelled by the dynamic oracle and refreshed every
/// `relabel_every` epochs.
pub fn train_supervised(
    train: &[Sentence],
    dev: &[Sentence],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut model = config.new_model(train, &mut rng)?;
    let machine = model.machine;
    // The static oracle is undefined on non-projective trees; the dynamic
    // oracle is not.
    let all: Vec<&Sentence> = train.iter().filter(|s| s.n() > 0).collect();
    let usable: Vec<&Sentence> = all
        .iter()
        .copied()
        .filter(|s| !machine.kind.parses() || is_projective(s))
        .collect();
    if usable.is_empty() {
        return Err(Error::Training("no usable training sentence (parsing needs projective trees)".into()));
    }
    let dev = if dev.is_empty() { train } else { dev };
    let mut opt = Optimizer::<f32>::new(config.optimizer);
    let mut best = Checkpoint::new();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut examples = Vec::new();

    for epoch in 1..=config.epochs {
        if epoch <= config.static_epochs {
            if epoch == 1 {
                examples = static_examples(&model, &machine, &usable)?;
            }
        } else if (epoch - config.static_epochs - 1) % config.relabel_every == 0 {
            examples = dynamic_examples(&model, &machine, &all)?;
        }

        let order = shuffled(examples.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::default();
            for &i in batch {
                let ex = &examples[i];
                let loss = supervised_gradient(&model.net, &ex.features, ex.state, ex.gold, Some(&mut rng), &mut grads)?;
                total += f64::from(loss);
            }
            if !grads.is_finite() {
                return Err(crate::neural::NeuralError::NonFinite("gradient").into());
            }
            opt.step(&mut model.net, &grads, 1.0 / batch.len() as f32);
        }

        let (dev_metrics, dev_backs) = evaluate(&model, dev, None)?;
        best.offer(&model, epoch, &dev_metrics);
        let m = EpochMetrics {
            epoch,
            loss: total / examples.len().max(1) as f64,
            updates: examples.len().div_ceil(config.batch_size),
            epsilon: 0.0,
            beta: 0.0,
            dev: dev_metrics,
            train_backs: 0,
            dev_backs,
            aborted: 0,
        };
        log::info!("epoch {epoch}: loss {:.4} upos {:.4} uas {:.4}", m.loss, m.dev.upos_accuracy, m.dev.uas);
        let flow = on_epoch(&m);
        metrics.push(m);
        if flow.is_break() {
            break;
        }
    }

    let best_epoch = best.epoch;
    let best_model = best.model.unwrap_or_else(|| model.clone());
    Ok(TrainOutcome { best: best_model, best_epoch, last: model, metrics })
}

fn static_examples(model: &Model, machine: &Machine, sentences: &[&Sentence]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for s in sentences {
        let actions = static_oracle(s, &model.tags, machine)?;
        let mut c = Configuration::initial(s.n(), machine);
        for a in actions {
            push_example(&mut out, model, &c, s, a);
            c.apply(machine, a)?;
        }
    }
    Ok(out)
}

/// Follows the model's greedy choices and labels every visited
/// configuration with the oracle's action.
fn dynamic_examples(model: &Model, machine: &Machine, sentences: &[&Sentence]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for s in sentences {
        let mut c = Configuration::initial(s.n(), machine);
        let bound = machine.max_actions(s.n());
        while !c.is_terminal() && c.history().len() < bound {
            let gold = match optimal_action(&c, machine, s, &model.tags) {
                Ok(a) => a,
                Err(OracleError::NoOptimalAction(_)) => break,
                Err(e) => return Err(e.into()),
            };
            push_example(&mut out, model, &c, s, gold);
            let a = model.greedy_action(&c, s, machine)?;
            c.apply(machine, a)?;
        }
    }
    Ok(out)
}

fn push_example(out: &mut Vec<Example>, model: &Model, c: &Configuration, s: &Sentence, gold: Action) {
    if c.state() == State::Back && !model.machine.is_backtracking() {
        return;
    }
    out.push(Example { features: model.features(c, s), state: c.state(), gold: gold.head_index() });
}
