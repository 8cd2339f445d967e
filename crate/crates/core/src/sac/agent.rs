//! Networks, losses and the gradient step of one SAC agent.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::replay::Batch;
use super::{td_target, ActorKind, SacConfig};
use crate::error::{Error, Result};
use crate::moe::{noise_draws, MoeActor, MoeConfig, MoeForward, RouterDecision};
use crate::nn::checkpoint::Archive;
use crate::nn::dist::{sample_squashed_gaussian, squashed_sample, standard_normal};
use crate::nn::{Activation, Adam, Grad, LayerSpec, Mlp, ParamStore, Real, ScalarAdam, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub enum ActorNet {
    Mlp(Mlp),
    Moe(MoeActor),
}

pub struct PolicyOut {
    pub mean: Var,
    pub log_std: Var,
    pub moe: Option<MoeForward>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f64>,
    /// Absent for deterministic actions.
    pub log_prob: Option<f64>,
    pub decisions: Option<Vec<RouterDecision>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub load_loss: Option<f64>,
    pub alpha: f64,
}

/// Actor objective on a tape, with its pieces.
pub struct ActorLoss {
    pub loss: Var,
    pub log_pi: Var,
    pub load: Option<Var>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AgentMeta {
    kind: ActorKind,
    obs_dim: usize,
    act_dim: usize,
    sac: SacConfig,
    moe: MoeConfig,
    updates: u64,
}

#[derive(Clone, Debug)]
pub struct Agent<F> {
    pub kind: ActorKind,
    /// Environment observation width.
    pub obs_dim: usize,
    /// Network input width (one more than `obs_dim` with the oracle channel).
    pub input_dim: usize,
    pub act_dim: usize,
    pub sac: SacConfig,
    pub moe: MoeConfig,
    pub actor: ActorNet,
    pub actor_params: ParamStore<F>,
    pub critics: [Mlp; 2],
    pub critic_params: ParamStore<F>,
    pub target_params: ParamStore<F>,
    pub log_alpha: f64,
    pub actor_opt: Adam<F>,
    pub critic_opt: Adam<F>,
    pub alpha_opt: ScalarAdam,
    pub updates: u64,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(hidden);
    s.push(output);
    s
}

impl<F: Real> Agent<F> {
    pub fn new<R: Rng + ?Sized>(
        kind: ActorKind,
        obs_dim: usize,
        act_dim: usize,
        sac: SacConfig,
        moe: MoeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        sac.validate()?;
        let input_dim = obs_dim + usize::from(kind.uses_oracle());
        let mut actor_params = ParamStore::new();
        let actor = match kind {
            ActorKind::SacMoe => ActorNet::Moe(MoeActor::new(
                &mut actor_params,
                "actor",
                input_dim,
                act_dim,
                moe.clone(),
                rng,
            )?),
            ActorKind::Sac | ActorKind::SacUpTrue => ActorNet::Mlp(Mlp::new(
                &mut actor_params,
                "actor",
                LayerSpec::new(
                    layer_sizes(input_dim, &sac.actor_hidden, 2 * act_dim),
                    Activation::Relu,
                    Activation::Identity,
                ),
                rng,
            )?),
        };
        let mut critic_params = ParamStore::new();
        let spec = LayerSpec::new(
            layer_sizes(input_dim + act_dim, &sac.critic_hidden, 1),
            Activation::Relu,
            Activation::Identity,
        );
        let q1 = Mlp::new(&mut critic_params, "q1", spec.clone(), rng)?;
        let q2 = Mlp::new(&mut critic_params, "q2", spec, rng)?;
        let target_params = critic_params.clone();
        let actor_opt = Adam::new(&actor_params, sac.optimizer);
        let critic_opt = Adam::new(&critic_params, sac.optimizer);
        Ok(Self {
            kind,
            obs_dim,
            input_dim,
            act_dim,
            log_alpha: sac.init_alpha.ln(),
            sac,
            moe,
            actor,
            actor_params,
            critics: [q1, q2],
            critic_params,
            target_params,
            actor_opt,
            critic_opt,
            alpha_opt: ScalarAdam::default(),
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.sac.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    /// Load-loss weight actually applied (zero for non-MoE actors).
    pub fn lambda_load(&self) -> f64 {
        match self.actor {
            ActorNet::Moe(_) => self.moe.lambda_load,
            ActorNet::Mlp(_) => 0.0,
        }
    }

    /// Network input for an environment observation. Only the oracle-channel
    /// variant reads `active_mu`.
    pub fn input(&self, obs: &[f64], active_mu: Option<&[f64]>) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::ShapeMismatch(format!(
                "observation of length {}, expected {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let mut v = obs.to_vec();
        if self.kind.uses_oracle() {
            let mu = active_mu.ok_or_else(|| Error::Config("oracle-channel agent needs the active mode".into()))?;
            v.push(mu[0]);
        }
        Ok(v)
    }

    pub fn policy(
        &self,
        tape: &mut Tape<F>,
        params: &ParamStore<F>,
        obs: Var,
        noise: Option<&Tensor<F>>,
        g: Grad,
    ) -> Result<PolicyOut> {
        match &self.actor {
            ActorNet::Mlp(m) => {
                let out = m.forward(tape, params, obs, g)?;
                Ok(PolicyOut {
                    mean: tape.slice_cols(out, 0, self.act_dim),
                    log_std: tape.slice_cols(out, self.act_dim, self.act_dim),
                    moe: None,
                })
            }
            ActorNet::Moe(m) => {
                let f = m.forward(tape, params, obs, noise, g)?;
                Ok(PolicyOut {
                    mean: f.mean,
                    log_std: f.log_std,
                    moe: Some(f),
                })
            }
        }
    }

    pub fn q(&self, tape: &mut Tape<F>, params: &ParamStore<F>, i: usize, obs: Var, act: Var, g: Grad) -> Result<Var> {
        let x = tape.concat_cols(&[obs, act]);
        self.critics[i].forward(tape, params, x, g)
    }

    /// Training-time router noise for `batch` observations; `None` for MLP actors.
    pub fn router_noise<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Option<Tensor<F>> {
        match &self.actor {
            ActorNet::Moe(m) => Some(noise_draws(
                rng,
                batch * m.config.tokens,
                m.config.experts,
                m.config.noise_std,
            )),
            ActorNet::Mlp(_) => None,
        }
    }

    /// Single-step action. Stochastic actions use noisy routing and a
    /// squashed-Gaussian draw; deterministic actions take `tanh(mean)` with
    /// clean routing.
    pub fn act<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R, deterministic: bool) -> Result<ActOutput> {
        if input.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "policy input of length {}, expected {}",
                input.len(),
                self.input_dim
            )));
        }
        let noise = if deterministic { None } else { self.router_noise(rng, 1) };
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&input.iter().map(|&v| F::c(v)).collect::<Vec<_>>()));
        let p = self.policy(&mut tape, &self.actor_params, x, noise.as_ref(), Grad::Stop)?;
        let mean: Vec<f64> = tape.value(p.mean).data.iter().map(|v| v.f64()).collect();
        let log_std: Vec<f64> = tape.value(p.log_std).data.iter().map(|v| v.f64()).collect();
        let decisions = p.moe.map(|f| f.decisions);
        if deterministic {
            return Ok(ActOutput {
                action: mean.iter().map(|m| m.tanh()).collect(),
                log_prob: None,
                decisions,
            });
        }
        let (action, log_prob) = sample_squashed_gaussian(&mean, &log_std, rng);
        Ok(ActOutput {
            action,
            log_prob: Some(log_prob),
            decisions,
        })
    }

    /// TD targets for a batch, with fresh next actions from the current actor.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch<F>, rng: &mut R) -> Result<Tensor<F>> {
        let b = batch.obs.rows;
        let noise = self.router_noise(rng, b);
        let eps = standard_normal::<F, _>(rng, b, self.act_dim);
        self.critic_targets_with(batch, noise.as_ref(), &eps)
    }

    pub fn critic_targets_with(&self, batch: &Batch<F>, noise: Option<&Tensor<F>>, eps: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let s2 = tape.constant(batch.next_obs.clone());
        let p = self.policy(&mut tape, &self.actor_params, s2, noise, Grad::Stop)?;
        let (a2, logp) = squashed_sample(&mut tape, p.mean, p.log_std, eps);
        let q1 = self.q(&mut tape, &self.target_params, 0, s2, a2, Grad::Stop)?;
        let q2 = self.q(&mut tape, &self.target_params, 1, s2, a2, Grad::Stop)?;
        let m = tape.minimum(q1, q2);
        let (alpha, gamma) = (self.alpha(), self.sac.gamma);
        let (mq, lp) = (tape.value(m), tape.value(logp));
        Ok(Tensor::from_fn(batch.obs.rows, 1, |r, _| {
            F::c(td_target(
                batch.reward.at(r, 0).f64(),
                batch.done.at(r, 0).f64() > 0.5,
                mq.at(r, 0).f64(),
                lp.at(r, 0).f64(),
                alpha,
                gamma,
            ))
        }))
    }

    /// `½ (mean (Q1 - y)² + mean (Q2 - y)²)`.
    pub fn critic_loss(&self, tape: &mut Tape<F>, params: &ParamStore<F>, batch: &Batch<F>, y: &Tensor<F>) -> Result<Var> {
        let s = tape.constant(batch.obs.clone());
        let a = tape.constant(batch.action.clone());
        let y = tape.constant(y.clone());
        let mut total = None;
        for i in 0..2 {
            let q = self.q(tape, params, i, s, a, Grad::Track)?;
            let d = tape.sub(q, y);
            let sq = tape.square(d);
            let m = tape.mean(sq);
            total = Some(match total {
                Some(t) => tape.add(t, m),
                None => m,
            });
        }
        Ok(tape.scale(total.expect("two critics"), F::c(0.5)))
    }

    /// `mean(α log π - min Q) + λ_load · load` at the batch states, critics frozen.
    pub fn actor_loss(
        &self,
        tape: &mut Tape<F>,
        actor_params: &ParamStore<F>,
        obs: &Tensor<F>,
        noise: Option<&Tensor<F>>,
        eps: &Tensor<F>,
    ) -> Result<ActorLoss> {
        let s = tape.constant(obs.clone());
        let p = self.policy(tape, actor_params, s, noise, Grad::Track)?;
        let (a, log_pi) = squashed_sample(tape, p.mean, p.log_std, eps);
        let q1 = self.q(tape, &self.critic_params, 0, s, a, Grad::Stop)?;
        let q2 = self.q(tape, &self.critic_params, 1, s, a, Grad::Stop)?;
        let mq = tape.minimum(q1, q2);
        let ent = tape.scale(log_pi, F::c(self.alpha()));
        let per = tape.sub(ent, mq);
        let mut loss = tape.mean(per);
        let mut load = None;
        if let (Some(f), ActorNet::Moe(m)) = (&p.moe, &self.actor) {
            let l = m.load_loss(tape, f);
            let weighted = tape.scale(l, F::c(self.moe.lambda_load));
            loss = tape.add(loss, weighted);
            load = Some(l);
        }
        Ok(ActorLoss { loss, log_pi, load })
    }

    /// One critic, actor, temperature and target update on `batch`.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> Result<UpdateStats> {
        let y = self.critic_targets(batch, rng)?;

        let mut tape = Tape::new();
        let cl = self.critic_loss(&mut tape, &self.critic_params, batch, &y)?;
        let critic_loss = tape.value(cl).item().f64();
        if !critic_loss.is_finite() {
            return Err(self.diagnose("critic", critic_loss));
        }
        let grads = tape.backward(cl)?.params;
        self.critic_opt.apply(&mut self.critic_params, &grads)?;

        let b = batch.obs.rows;
        let noise = self.router_noise(rng, b);
        let eps = standard_normal::<F, _>(rng, b, self.act_dim);
        let mut tape = Tape::new();
        let al = self.actor_loss(&mut tape, &self.actor_params, &batch.obs, noise.as_ref(), &eps)?;
        let actor_loss = tape.value(al.loss).item().f64();
        if !actor_loss.is_finite() {
            return Err(self.diagnose("actor", actor_loss));
        }
        let load_loss = al.load.map(|l| tape.value(l).item().f64());
        let mean_log_pi = tape.value(al.log_pi).data.iter().map(|v| v.f64()).sum::<f64>() / b as f64;
        let grads = tape.backward(al.loss)?.params;
        self.actor_opt.apply(&mut self.actor_params, &grads)?;

        if self.sac.auto_alpha {
            // d/d log α of -log α · (log π + H̄).
            let g = -(mean_log_pi + self.target_entropy());
            self.alpha_opt.apply(&mut self.log_alpha, g, &self.sac.optimizer);
        }

        self.target_params
            .soft_update_from(&self.critic_params, F::c(self.sac.tau))?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            load_loss,
            alpha: self.alpha(),
        })
    }

    fn diagnose(&self, which: &str, value: f64) -> Error {
        Error::NonFiniteLoss(format!(
            "{which} loss {value} at update {}; alpha {}; actor params finite: {}; critic params finite: {}",
            self.updates,
            self.alpha(),
            self.actor_params.all_finite(),
            self.critic_params.all_finite()
        ))
    }

    pub fn save_to(&self, ar: &mut Archive, prefix: &str) {
        ar.put_store(&format!("{prefix}/actor"), &self.actor_params);
        ar.put_store(&format!("{prefix}/critic"), &self.critic_params);
        ar.put_store(&format!("{prefix}/target"), &self.target_params);
        self.actor_opt.save_to(ar, &format!("{prefix}/actor_opt"));
        self.critic_opt.save_to(ar, &format!("{prefix}/critic_opt"));
        ar.put_real::<f64>(
            &format!("{prefix}/alpha"),
            vec![3],
            &[self.log_alpha, self.alpha_opt.m, self.alpha_opt.v],
        );
        ar.put_u64(&format!("{prefix}/alpha_step"), &[self.alpha_opt.step]);
    }

    pub fn meta(&self) -> Value {
        json!(AgentMeta {
            kind: self.kind,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            sac: self.sac.clone(),
            moe: self.moe.clone(),
            updates: self.updates,
        })
    }

    /// Standalone checkpoint of this agent.
    pub fn to_archive(&self) -> Archive {
        let mut ar = Archive::new(json!({ "agent": self.meta(), "dtype": F::DTYPE }));
        self.save_to(&mut ar, "agent");
        ar
    }

    pub fn load_from(ar: &Archive, meta: &Value, prefix: &str) -> Result<Self> {
        let m: AgentMeta = serde_json::from_value(meta.clone())?;
        // The generator only fills values that are overwritten below.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut a = Self::new(m.kind, m.obs_dim, m.act_dim, m.sac, m.moe, &mut rng)?;
        ar.load_store(&format!("{prefix}/actor"), &mut a.actor_params)?;
        ar.load_store(&format!("{prefix}/critic"), &mut a.critic_params)?;
        ar.load_store(&format!("{prefix}/target"), &mut a.target_params)?;
        a.actor_opt.load_from(ar, &format!("{prefix}/actor_opt"))?;
        a.critic_opt.load_from(ar, &format!("{prefix}/critic_opt"))?;
        let (_, alpha) = ar.get_real::<f64>(&format!("{prefix}/alpha"))?;
        if alpha.len() != 3 {
            return Err(Error::BadCheckpoint("temperature state".into()));
        }
        a.log_alpha = alpha[0];
        a.alpha_opt = ScalarAdam {
            step: ar.get_u64(&format!("{prefix}/alpha_step"))?[0],
            m: alpha[1],
            v: alpha[2],
        };
        a.updates = m.updates;
        Ok(a)
    }

    pub fn from_archive(ar: &Archive) -> Result<Self> {
        let meta = ar
            .meta()
            .get("agent")
            .ok_or_else(|| Error::BadCheckpoint("no agent metadata".into()))?;
        Self::load_from(ar, meta, "agent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::sac::replay::{ReplayBuffer, Transition};
    use rand_chacha::ChaCha8Rng;

    fn small_sac() -> SacConfig {
        SacConfig {
            actor_hidden: vec![8],
            critic_hidden: vec![8, 8],
            batch_size: 8,
            buffer_capacity: 64,
            ..Default::default()
        }
    }

    fn small_moe() -> MoeConfig {
        MoeConfig {
            tokens: 2,
            token_dim: 3,
            encoder_hidden: vec![5],
            ..Default::default()
        }
    }

    fn buffer(rng: &mut ChaCha8Rng, n: usize, obs: usize) -> ReplayBuffer<f64> {
        let mut b = ReplayBuffer::new(64, obs, 2);
        for i in 0..n {
            b.push(&Transition {
                obs: (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: (0..2).map(|_| rng.random_range(-0.9..0.9)).collect(),
                reward: rng.random_range(-1.0..1.0),
                next_obs: (0..obs).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: i % 5 == 0,
                context_id: 0,
            })
            .unwrap();
        }
        b
    }

    #[test]
    fn double_q_target_uses_the_elementwise_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Agent::<f64>::new(ActorKind::Sac, 3, 2, small_sac(), small_moe(), &mut rng).unwrap();
        let batch = buffer(&mut rng, 20, 3).sample(&mut rng, 8).unwrap();
        let eps = standard_normal::<f64, _>(&mut rng, 8, 2);
        let y = agent.critic_targets_with(&batch, None, &eps).unwrap();
        // Recompute both target critics by hand for every row.
        let mut tape = Tape::new();
        let s2 = tape.constant(batch.next_obs.clone());
        let p = agent.policy(&mut tape, &agent.actor_params, s2, None, Grad::Stop).unwrap();
        let (a2, lp) = squashed_sample(&mut tape, p.mean, p.log_std, &eps);
        let q1 = agent.q(&mut tape, &agent.target_params, 0, s2, a2, Grad::Stop).unwrap();
        let q2 = agent.q(&mut tape, &agent.target_params, 1, s2, a2, Grad::Stop).unwrap();
        for r in 0..8 {
            let m = tape.value(q1).at(r, 0).min(tape.value(q2).at(r, 0));
            let expect = td_target(
                batch.reward.at(r, 0),
                batch.done.at(r, 0) > 0.5,
                m,
                tape.value(lp).at(r, 0),
                agent.alpha(),
                0.99,
            );
            assert_eq!(y.at(r, 0), expect);
        }
    }

    #[test]
    fn zero_load_weight_is_plain_actor_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut moe = small_moe();
        moe.lambda_load = 0.0;
        let agent = Agent::<f64>::new(ActorKind::SacMoe, 3, 2, small_sac(), moe, &mut rng).unwrap();
        let batch = buffer(&mut rng, 20, 3).sample(&mut rng, 8).unwrap();
        let noise = agent.router_noise(&mut rng, 8);
        let eps = standard_normal::<f64, _>(&mut rng, 8, 2);
        let mut tape = Tape::new();
        let al = agent
            .actor_loss(&mut tape, &agent.actor_params, &batch.obs, noise.as_ref(), &eps)
            .unwrap();
        assert!(tape.value(al.load.unwrap()).item() >= 0.0);
        // Recompute mean(α log π - min Q) without the load term.
        let s = tape.constant(batch.obs.clone());
        let p = agent.policy(&mut tape, &agent.actor_params, s, noise.as_ref(), Grad::Stop).unwrap();
        let (a, lp) = squashed_sample(&mut tape, p.mean, p.log_std, &eps);
        let q1 = agent.q(&mut tape, &agent.critic_params, 0, s, a, Grad::Stop).unwrap();
        let q2 = agent.q(&mut tape, &agent.critic_params, 1, s, a, Grad::Stop).unwrap();
        let expect: f64 = (0..8)
            .map(|r| {
                crate::sac::actor_term(
                    tape.value(q1).at(r, 0).min(tape.value(q2).at(r, 0)),
                    tape.value(lp).at(r, 0),
                    agent.alpha(),
                )
            })
            .sum::<f64>()
            / 8.0;
        assert!((tape.value(al.loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn actor_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = Agent::<f64>::new(ActorKind::SacMoe, 3, 2, small_sac(), small_moe(), &mut rng).unwrap();
        let batch = buffer(&mut rng, 20, 3).sample(&mut rng, 8).unwrap();
        let noise = agent.router_noise(&mut rng, 8);
        let eps = standard_normal::<f64, _>(&mut rng, 8, 2);
        let eval = |p: &ParamStore<f64>, tape: &mut Tape<f64>| {
            agent.actor_loss(tape, p, &batch.obs, noise.as_ref(), &eps).unwrap().loss
        };
        let mut tape = Tape::new();
        let l = eval(&agent.actor_params, &mut tape);
        let grads = tape.backward(l).unwrap().params;
        let report = check_gradients(
            &agent.actor_params,
            &grads,
            |p| {
                let mut t = Tape::new();
                let l = eval(p, &mut t);
                t.value(l).item()
            },
            1e-5,
            1e-6,
            1,
        );
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn updates_run_and_alpha_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ActorKind::Sac, ActorKind::SacMoe] {
            let mut agent = Agent::<f32>::new(kind, 3, 2, small_sac(), small_moe(), &mut rng).unwrap();
            let mut b = ReplayBuffer::<f32>::new(64, 3, 2);
            for i in 0..30 {
                b.push(&Transition {
                    obs: vec![i as f64 * 0.1, 0.0, 1.0],
                    action: vec![0.1, -0.2],
                    reward: 1.0,
                    next_obs: vec![i as f64 * 0.1 + 0.1, 0.0, 1.0],
                    done: false,
                    context_id: 0,
                })
                .unwrap();
            }
            for _ in 0..20 {
                let batch = b.sample(&mut rng, 8).unwrap();
                let st = agent.update(&batch, &mut rng).unwrap();
                assert!(st.alpha > 0.0);
                assert!(st.critic_loss.is_finite());
                assert_eq!(st.load_loss.is_some(), kind == ActorKind::SacMoe);
            }
        }
    }

    #[test]
    fn fixed_alpha_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sac = SacConfig {
            auto_alpha: false,
            init_alpha: 0.2,
            ..small_sac()
        };
        let mut agent = Agent::<f64>::new(ActorKind::Sac, 3, 2, sac, small_moe(), &mut rng).unwrap();
        let b = buffer(&mut rng, 20, 3);
        for _ in 0..5 {
            let batch = b.sample(&mut rng, 8).unwrap();
            agent.update(&batch, &mut rng).unwrap();
        }
        assert_eq!(agent.alpha(), 0.2f64.ln().exp());
    }

    #[test]
    fn archive_round_trip_restores_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = Agent::<f32>::new(ActorKind::SacMoe, 3, 2, small_sac(), small_moe(), &mut rng).unwrap();
        let bytes = agent.to_archive().to_bytes().unwrap();
        let back = Agent::<f32>::from_archive(&Archive::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_archive().to_bytes().unwrap(), bytes);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let x = [0.1, -0.4, 0.9];
        assert_eq!(agent.act(&x, &mut r1, false).unwrap(), back.act(&x, &mut r2, false).unwrap());
    }

    #[test]
    fn oracle_input_appends_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Agent::<f32>::new(ActorKind::SacUpTrue, 3, 2, small_sac(), small_moe(), &mut rng).unwrap();
        assert_eq!(a.input(&[1.0, 2.0, 3.0], Some(&[0.5])).unwrap(), vec![1.0, 2.0, 3.0, 0.5]);
        assert!(a.input(&[1.0, 2.0, 3.0], None).is_err());
        let plain = Agent::<f32>::new(ActorKind::Sac, 3, 2, small_sac(), small_moe(), &mut rng).unwrap();
        assert_eq!(plain.input(&[1.0, 2.0, 3.0], Some(&[0.5])).unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
