//! Mixture-of-experts actor.
//!
//! An encoder maps the observation to `T·d` features that are split into `T`
//! tokens. Each token is routed to its top-k experts (noisy top-k during
//! training), the experts' outputs are mixed with the renormalized clean
//! router probabilities, and an affine head maps the concatenated tokens to
//! the mean and log-std of a squashed Gaussian.
//!
//! Experts are evaluated densely on every token and multiplied by a weight
//! that is exactly zero off the selected set, so gradients reach only the
//! selected experts.

pub mod load;
pub mod router;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Grad, LayerSpec, Linear, Mlp, ParamStore, Real, Tape, Tensor, Var};

pub use load::{cv_squared, expert_loads, load_loss, load_loss_tape};
pub use router::{route, top_k, RouterDecision};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoeConfig {
    pub tokens: usize,
    pub token_dim: usize,
    pub experts: usize,
    pub top_k: usize,
    pub noise_std: f64,
    pub lambda_load: f64,
    pub encoder_hidden: Vec<usize>,
}

impl Default for MoeConfig {
    fn default() -> Self {
        Self {
            tokens: 8,
            token_dim: 16,
            experts: 4,
            top_k: 2,
            noise_std: 1.0,
            lambda_load: 0.01,
            encoder_hidden: vec![64],
        }
    }
}

impl MoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.experts {
            return Err(Error::Config(format!(
                "top_k must be in 1..={}, got {}",
                self.experts, self.top_k
            )));
        }
        if self.tokens == 0 || self.token_dim == 0 {
            return Err(Error::Config("token count and width must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.lambda_load >= 0.0) {
            return Err(Error::Config("noise_std and lambda_load must be >= 0".into()));
        }
        Ok(())
    }

    pub fn encoder_width(&self) -> usize {
        self.tokens * self.token_dim
    }
}

#[derive(Clone, Debug)]
pub struct MoeActor {
    pub config: MoeConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub encoder: Mlp,
    pub router: Linear,
    pub experts: Vec<Mlp>,
    pub head: Linear,
}

/// Everything a training step needs from one batched forward pass.
#[derive(Clone, Debug)]
pub struct MoeForward {
    pub mean: Var,
    pub log_std: Var,
    pub tokens: Var,
    /// `(B·T) x E` clean logits.
    pub logits: Var,
    /// Logits plus selection noise.
    pub noisy: Var,
    /// Column of the k-th largest noisy score, per token.
    pub kth: Vec<usize>,
    /// Row `b·T + t` is token `t` of batch element `b`.
    pub decisions: Vec<RouterDecision>,
}

/// Selection noise for `rows` tokens, `N(0, std^2)` per expert.
pub fn noise_draws<F: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, experts: usize, std: f64) -> Tensor<F> {
    Tensor::from_fn(rows, experts, |_, _| F::c(std * rng.sample::<f64, _>(StandardNormal)))
}

impl MoeActor {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        obs_dim: usize,
        act_dim: usize,
        config: MoeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.token_dim;
        let mut sizes = vec![obs_dim];
        sizes.extend(&config.encoder_hidden);
        sizes.push(config.encoder_width());
        let encoder = Mlp::new(
            store,
            &format!("{prefix}.encoder"),
            LayerSpec::new(sizes, Activation::Relu, Activation::Identity),
            rng,
        )?;
        let router = Linear::new(store, &format!("{prefix}.router"), d, config.experts, rng)?;
        let experts = (0..config.experts)
            .map(|e| {
                Mlp::new(
                    store,
                    &format!("{prefix}.expert{e}"),
                    LayerSpec::new(vec![d, d, d], Activation::Relu, Activation::Identity),
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(
            store,
            &format!("{prefix}.head"),
            config.encoder_width(),
            2 * act_dim,
            rng,
        )?;
        Ok(Self {
            config,
            obs_dim,
            act_dim,
            encoder,
            router,
            experts,
            head,
        })
    }

    /// Encoder output reshaped to `(B·T) x d` tokens.
    pub fn tokenize<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, obs: Var, g: Grad) -> Result<Var> {
        let h = self.encoder.forward(tape, store, obs, g)?;
        let (b, w) = tape.shape(h);
        if w != self.config.encoder_width() {
            return Err(Error::ShapeMismatch(format!(
                "encoder width {w}, expected {}",
                self.config.encoder_width()
            )));
        }
        Ok(tape.reshape(h, b * self.config.tokens, self.config.token_dim))
    }

    /// Batched forward. `noise` is `(B·T) x E` selection noise; `None`
    /// routes on the clean logits.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        obs: Var,
        noise: Option<&Tensor<F>>,
        g: Grad,
    ) -> Result<MoeForward> {
        let (batch, _) = tape.shape(obs);
        let e_count = self.config.experts;
        let tokens = self.tokenize(tape, store, obs, g)?;
        let n = batch * self.config.tokens;
        let logits = self.router.forward(tape, store, tokens, g);
        let noisy = match noise {
            Some(nz) => {
                if nz.shape() != (n, e_count) {
                    return Err(Error::ShapeMismatch(format!(
                        "router noise is {:?}, expected {:?}",
                        nz.shape(),
                        (n, e_count)
                    )));
                }
                let c = tape.constant(nz.clone());
                tape.add(logits, c)
            }
            None => logits,
        };

        let lv = tape.value(logits);
        let nv = noise;
        let mut decisions = Vec::with_capacity(n);
        let mut mask = vec![false; n * e_count];
        let mut kth = Vec::with_capacity(n);
        for r in 0..n {
            let row: Vec<f64> = lv.row_slice(r).iter().map(|v| v.f64()).collect();
            let nz: Option<Vec<f64>> = nv.map(|t| t.row_slice(r).iter().map(|v| v.f64()).collect());
            let d = route(&row, nz.as_deref(), self.config.top_k);
            for &s in &d.selected {
                mask[r * e_count + s] = true;
            }
            kth.push(*d.selected.last().expect("k >= 1"));
            decisions.push(d);
        }
        let weights = tape.masked_softmax(logits, mask);

        let mut agg: Option<Var> = None;
        for (e, expert) in self.experts.iter().enumerate() {
            let out = expert.forward(tape, store, tokens, g)?;
            let w = tape.slice_cols(weights, e, 1);
            let term = tape.mul(out, w);
            agg = Some(match agg {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
        let agg = agg.expect("at least one expert");
        let y = tape.reshape(agg, batch, self.config.encoder_width());
        let out = self.head.forward(tape, store, y, g);
        let mean = tape.slice_cols(out, 0, self.act_dim);
        let log_std = tape.slice_cols(out, self.act_dim, self.act_dim);
        Ok(MoeForward {
            mean,
            log_std,
            tokens,
            logits,
            noisy,
            kth,
            decisions,
        })
    }

    pub fn load_loss<F: Real>(&self, tape: &mut Tape<F>, fwd: &MoeForward) -> Var {
        load_loss_tape(tape, fwd.logits, fwd.noisy, fwd.kth.clone())
    }

    /// Tape-free single observation: `(mean, log_std, decisions)`.
    pub fn infer<F: Real>(
        &self,
        store: &ParamStore<F>,
        obs: &[f64],
        noise: Option<&Tensor<F>>,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<RouterDecision>)> {
        if obs.len() != self.obs_dim {
            return Err(Error::ShapeMismatch(format!(
                "observation of length {}, expected {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&obs.iter().map(|&v| F::c(v)).collect::<Vec<_>>()));
        let f = self.forward(&mut tape, store, x, noise, Grad::Stop)?;
        let mean = tape.value(f.mean).data.iter().map(|v| v.f64()).collect();
        let log_std = tape.value(f.log_std).data.iter().map(|v| v.f64()).collect();
        Ok((mean, log_std, f.decisions))
    }
}

/// Copy of `store` with experts relabelled: new expert `e` is old expert
/// `perm[e]`, and router columns move with them.
pub fn permute_experts<F: Real>(store: &ParamStore<F>, actor: &MoeActor, perm: &[usize]) -> Result<ParamStore<F>> {
    let e_count = actor.config.experts;
    let mut sorted = perm.to_vec();
    sorted.sort_unstable();
    if sorted != (0..e_count).collect::<Vec<_>>() {
        return Err(Error::Config(format!("{perm:?} is not a permutation of 0..{e_count}")));
    }
    let mut out = store.clone();
    for (new, &old) in perm.iter().enumerate() {
        for (ln, lo) in actor.experts[new].layers.iter().zip(&actor.experts[old].layers) {
            out.set(ln.w, store.get(lo.w).clone())?;
            out.set(ln.b, store.get(lo.b).clone())?;
        }
    }
    for id in [actor.router.w, actor.router.b] {
        let src = store.get(id);
        let moved = Tensor::from_fn(src.rows, src.cols, |r, c| src.at(r, perm[c]));
        out.set(id, moved)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::nn::mlp_forward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(experts: usize, top_k: usize) -> MoeConfig {
        MoeConfig {
            tokens: 3,
            token_dim: 4,
            experts,
            top_k,
            noise_std: 1.0,
            lambda_load: 0.01,
            encoder_hidden: vec![6],
        }
    }

    fn build(cfg: MoeConfig, seed: u64) -> (ParamStore<f64>, MoeActor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let actor = MoeActor::new(&mut store, "pi", 5, 2, cfg, &mut rng).unwrap();
        (store, actor)
    }

    /// Re-computes the mixture from the layer primitives, one token at a time.
    fn oracle(store: &ParamStore<f64>, a: &MoeActor, obs: &[f64], noise: Option<&Tensor<f64>>) -> Vec<f64> {
        let cfg = &a.config;
        let h = mlp_forward(store, &a.encoder, obs).unwrap();
        let w = store.get(a.router.w);
        let b = store.get(a.router.b);
        let mut y = Vec::new();
        for t in 0..cfg.tokens {
            let tok = &h[t * cfg.token_dim..(t + 1) * cfg.token_dim];
            let logits: Vec<f64> = (0..cfg.experts)
                .map(|e| b.at(0, e) + (0..cfg.token_dim).map(|i| tok[i] * w.at(i, e)).sum::<f64>())
                .collect();
            let nz = noise.map(|n| n.row_slice(t).to_vec());
            let d = route(&logits, nz.as_deref(), cfg.top_k);
            let mut acc = vec![0.0; cfg.token_dim];
            for (&e, &we) in d.selected.iter().zip(&d.weights) {
                let out = mlp_forward(store, &a.experts[e], tok).unwrap();
                for (a, o) in acc.iter_mut().zip(out) {
                    *a += we * o;
                }
            }
            y.extend(acc);
        }
        let hw = store.get(a.head.w);
        let hb = store.get(a.head.b);
        (0..2 * a.act_dim)
            .map(|j| hb.at(0, j) + y.iter().enumerate().map(|(i, v)| v * hw.at(i, j)).sum::<f64>())
            .collect()
    }

    #[test]
    fn default_config_has_eight_tokens() {
        let cfg = MoeConfig::default();
        assert_eq!(cfg.tokens, 8);
        assert_eq!((cfg.experts, cfg.top_k), (4, 2));
        assert_eq!(cfg.lambda_load, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let a = MoeActor::new(&mut store, "pi", 7, 2, cfg.clone(), &mut rng).unwrap();
        assert_eq!(a.encoder.spec.output_dim(), 8 * cfg.token_dim);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(3, 7));
        let tok = a.tokenize(&mut tape, &store, x, Grad::Stop).unwrap();
        assert_eq!(tape.shape(tok), (24, cfg.token_dim));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(small_config(4, 0).validate().is_err());
        assert!(small_config(4, 5).validate().is_err());
        assert!(small_config(4, 4).validate().is_ok());
    }

    #[test]
    fn forward_matches_token_by_token_oracle() {
        let (store, a) = build(small_config(4, 2), 1);
        let obs = [0.3, -0.7, 1.1, 0.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = noise_draws::<f64, _>(&mut rng, 3, 4, 1.0);
        for nz in [None, Some(&noise)] {
            let (mean, log_std, _) = a.infer(&store, &obs, nz).unwrap();
            let expect = oracle(&store, &a, &obs, nz);
            for (x, y) in mean.iter().chain(&log_std).zip(&expect) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn single_expert_is_a_plain_network() {
        let (store, a) = build(small_config(1, 1), 2);
        let obs = [1.0, 2.0, -1.0, 0.5, 0.25];
        let (mean, log_std, dec) = a.infer(&store, &obs, None).unwrap();
        assert!(dec.iter().all(|d| d.weights == vec![1.0]));
        // enc -> expert per token -> head, no router involved.
        let h = mlp_forward(&store, &a.encoder, &obs).unwrap();
        let y: Vec<f64> = h
            .chunks(4)
            .flat_map(|tok| mlp_forward(&store, &a.experts[0], tok).unwrap())
            .collect();
        let out = mlp_forward(
            &store,
            &Mlp {
                layers: vec![a.head.clone()],
                spec: LayerSpec::new(vec![12, 4], Activation::Identity, Activation::Identity),
            },
            &y,
        )
        .unwrap();
        for (x, y) in mean.iter().chain(&log_std).zip(&out) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn expert_permutation_leaves_output_unchanged() {
        let (store, a) = build(small_config(4, 2), 6);
        let perm = [2, 0, 3, 1];
        let permuted = permute_experts(&store, &a, &perm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (m0, s0, d0) = a.infer(&store, &obs, None).unwrap();
            let (m1, s1, d1) = a.infer(&permuted, &obs, None).unwrap();
            for (x, y) in m0.iter().chain(&s0).zip(m1.iter().chain(&s1)) {
                assert!((x - y).abs() < 1e-12);
            }
            for (p, q) in d0.iter().zip(&d1) {
                let mapped: Vec<usize> = q.selected.iter().map(|&e| perm[e]).collect();
                assert_eq!(p.selected, mapped);
            }
        }
        assert!(permute_experts(&store, &a, &[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn deterministic_without_noise() {
        let (store, a) = build(small_config(4, 2), 3);
        let obs = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(a.infer(&store, &obs, None).unwrap(), a.infer(&store, &obs, None).unwrap());
    }

    #[test]
    fn gradients_reach_selected_experts_and_router() {
        let (store, a) = build(small_config(4, 2), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = Tensor::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let noise = noise_draws::<f64, _>(&mut rng, 12, 4, 1.0);
        let coef = Tensor::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let loss = |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
            let x = tape.constant(obs.clone());
            let f = a.forward(tape, s, x, Some(&noise), Grad::Track).unwrap();
            let c = tape.constant(coef.clone());
            let m = tape.mul(f.mean, c);
            let ls = tape.square(f.log_std);
            let s1 = tape.sum(m);
            let s2 = tape.sum(ls);
            let l = a.load_loss(tape, &f);
            let l = tape.scale(l, 0.5);
            let t = tape.add(s1, s2);
            (tape.add(t, l), f)
        };
        let mut tape = Tape::new();
        let (l, f) = loss(&store, &mut tape);
        let grads = tape.backward(l).unwrap().params;
        // Every expert that was selected somewhere gets a gradient.
        for e in 0..4 {
            let used = f.decisions.iter().any(|d| d.selected.contains(&e));
            let id = store.id(&format!("pi.expert{e}.l1.w")).unwrap();
            let nonzero = grads.dense(&store, id).data.iter().any(|&g| g != 0.0);
            assert_eq!(used, nonzero, "expert {e}");
        }
        let rw = store.id("pi.router.w").unwrap();
        assert!(grads.dense(&store, rw).data.iter().any(|&g| g != 0.0));

        let report = check_gradients(
            &store,
            &grads,
            |s| {
                let mut t = Tape::new();
                let (l, _) = loss(s, &mut t);
                t.value(l).item()
            },
            1e-5,
            1e-6,
            1,
        );
        assert!(report.max_rel_err < 1e-4, "{report:?}");
        assert!(report.skipped_fraction() < 0.01, "{report:?}");
    }
}
