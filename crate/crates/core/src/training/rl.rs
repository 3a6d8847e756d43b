use std::ops::ControlFlow;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::{evaluate, shuffled, Checkpoint, EpochMetrics, TrainConfig, TrainOutcome};
use crate::corpus::Sentence;
use crate::machine::{Action, Configuration, Machine, MachineError};
use crate::neural::{q_target, td_update, Model, Optimizer};
use crate::oracle::{optimal_action, OracleError};
use crate::reward::reward;
use crate::Result;

/// Exploration policy: a uniformly random legal action with probability
/// `epsilon`, the oracle's action with probability `beta`, otherwise the
/// greedy one.
pub fn select_action(
    model: &Model,
    c: &Configuration,
    sentence: &Sentence,
    machine: &Machine,
    epsilon: f64,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<Action> {
    let u: f64 = rng.gen();
    if u < epsilon {
        let legal = c.legal_actions(machine)?;
        return legal.choose(rng).copied().ok_or_else(|| MachineError::Terminal.into());
    }
    if u < epsilon + beta {
        match optimal_action(c, machine, sentence, &model.tags) {
            Ok(a) => return Ok(a),
            Err(OracleError::NoOptimalAction(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    model.greedy_action(c, sentence, machine)
}

/// Online deep Q-learning: one smooth-L1 TD update per transition.
pub fn train_rl(
    train: &[Sentence],
    dev: &[Sentence],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut model = config.new_model(train, &mut rng)?;
    let machine = model.machine;
    let dev = if dev.is_empty() { train } else { dev };
    let mut opt = Optimizer::<f32>::new(config.optimizer);
    let mut best = Checkpoint::new();
    let mut metrics = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let (epsilon, beta) = config.schedule.at(epoch);
        let mut total = 0.0;
        let mut updates = 0;
        let mut backs = 0;
        let mut aborted = 0;
        for i in shuffled(train.len(), &mut rng) {
            let s = &train[i];
            let bound = machine.max_actions(s.n());
            let mut c = Configuration::initial(s.n(), &machine);
            while !c.is_terminal() {
                if c.history().len() >= bound {
                    aborted += 1;
                    break;
                }
                let f = model.features(&c, s);
                let state = c.state();
                let a = select_action(&model, &c, s, &machine, epsilon, beta, &mut rng)?;
                let r = reward(&c, &machine, a, s, &model.tags)?;
                c.apply_rewarded(&machine, a, r)?;
                let next_q: Vec<f64> = if c.is_terminal() {
                    Vec::new()
                } else {
                    let q = model.q_values(&model.features(&c, s), &c)?;
                    c.legal_actions(&machine)?
                        .iter()
                        .map(|b| f64::from(q[b.head_index()]))
                        .collect()
                };
                let target = q_target(r, config.gamma, &next_q) as f32;
                let loss = td_update(&mut model.net, &mut opt, &f, state, a.head_index(), target, Some(&mut rng))?;
                total += f64::from(loss);
                updates += 1;
                backs += usize::from(a == Action::Back);
            }
        }

        let (dev_metrics, dev_backs) = evaluate(&model, dev, None)?;
        best.offer(&model, epoch, &dev_metrics);
        let m = EpochMetrics {
            epoch,
            loss: total / updates.max(1) as f64,
            updates,
            epsilon,
            beta,
            dev: dev_metrics,
            train_backs: backs,
            dev_backs,
            aborted,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} eps {epsilon:.3} beta {beta:.3} upos {:.4} uas {:.4} backs {backs}/{dev_backs}",
            m.loss,
            m.dev.upos_accuracy,
            m.dev.uas
        );
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
