//! The hybrid model: a top-down ladder of latent groups per subsequence,
//! chained across subsequences by a GRU hidden state and the previous
//! step's bottom latent.
//!
//! For each subsequence `x^t` (stride 1, `T = m − l + 1` of them):
//!
//! * inference: `q(z_L | h^{t−1}, x^t, z_1^{t−1})`, then
//!   `q(z_i | z_{i+1}, x^t)` for `i = L−1 … 1`;
//! * prior: `p(z_L | z_1^{t−1}, h^{t−1})`, then `p(z_i | z_{i+1})`, evaluated
//!   at the posterior samples;
//! * generation: `p(x^t | z_1^t, h^{t−1})`;
//! * recurrence: `h^t = GRU(h^{t−1}, x^t)`.
//!
//! The forecast is a linear map of `[h^T; z_1^T; …; z_L^T]`.

use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::gaussian::{self, DiagonalGaussian};
use crate::nn::{ForecastHead, GaussianMlp, GruCell, ParamStore, Pass};
use crate::tensor::{Noise, Rng, Tensor, Var, ZeroNoise};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyVaeConfig {
    /// Subsequence length.
    pub l: usize,
    /// Ladder size (number of latent groups per subsequence).
    #[serde(rename = "L")]
    pub ladder: usize,
    pub d_z: usize,
    pub d_h: usize,
    /// Forecast horizon.
    pub n: usize,
    /// Input window length.
    pub m: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for HyVaeConfig {
    fn default() -> Self {
        HyVaeConfig {
            l: 10,
            ladder: 4,
            d_z: 32,
            d_h: 32,
            n: 1,
            m: 50,
            warmup_epochs: 30,
            seed: 0,
        }
    }
}

impl HyVaeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.n == 0 {
            return fail(format!("m and n must be positive (m={}, n={})", self.m, self.n));
        }
        if self.l == 0 || self.l > self.m {
            return fail(format!(
                "subsequence length l={} must satisfy 1 <= l <= m={}",
                self.l, self.m
            ));
        }
        if self.ladder == 0 {
            return fail("ladder size L must be at least 1".into());
        }
        if self.d_z == 0 || self.d_h == 0 {
            return fail("latent and hidden dimensions must be positive".into());
        }
        Ok(())
    }

    /// Number of subsequences per window, `T = m − l + 1`.
    pub fn subsequences(&self) -> usize {
        self.m - self.l + 1
    }
}

/// Which parts of the model are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Pointwise recurrent latent model: `l = 1`, `L = 1`.
    NoSubseq,
    /// No temporal chain: no GRU and no `z_1^{t−1}` carry; each subsequence
    /// is encoded on its own and the forecast reads `[z_1^T; …; z_L^T]`.
    NoEntire,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoSubseq, Variant::NoEntire];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSubseq => "no_subseq",
            Variant::NoEntire => "no_entire",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_subseq" => Ok(Variant::NoSubseq),
            "no_entire" => Ok(Variant::NoEntire),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected full, no_subseq or no_entire)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Batch-mean values of the three ELBO terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub recon: f64,
    pub kl_ladder: f64,
    pub kl_temporal: f64,
    pub beta: f64,
}

impl ElboBreakdown {
    /// `recon − β·(kl_ladder + kl_temporal)`.
    pub fn elbo(&self) -> f64 {
        self.recon - self.beta * (self.kl_ladder + self.kl_temporal)
    }
}

/// Posteriors and reparameterized samples of one subsequence, ordered from
/// the top group `z_L` down to `z_1`.
#[derive(Clone, Debug)]
pub struct StepPosterior {
    pub posteriors: Vec<DiagonalGaussian>,
    pub samples: Vec<Var>,
}

impl StepPosterior {
    pub fn bottom(&self) -> Var {
        *self.samples.last().expect("ladder has at least one group")
    }
}

/// Tape variables produced by one unrolled ELBO evaluation; every term is
/// per-row (`[B × 1]`).
#[derive(Clone, Debug)]
pub struct ElboPass {
    pub recon: Var,
    pub kl_ladder: Var,
    pub kl_temporal: Var,
    /// `ℓ_enc = recon − β·(kl_ladder + kl_temporal)`.
    pub elbo: Var,
    pub beta: f64,
    /// `h^T`, absent for the no-temporal variant.
    pub final_hidden: Option<Var>,
    pub final_step: StepPosterior,
}

#[derive(Clone, Debug)]
pub struct Loss {
    /// Batch mean of `−ℓ_enc + ℓ_pred`, shape `[1]`.
    pub total: Var,
    pub elbo: ElboBreakdown,
    /// Batch mean of the forecast MSE term.
    pub pred: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForecastMode {
    /// Posterior means at every ladder level.
    Mean,
    /// One reparameterized draw per level.
    Sample,
}

#[derive(Clone, Debug)]
pub struct HyVaeModel {
    config: HyVaeConfig,
    variant: Variant,
    normalizer: Normalizer,
    params: ParamStore,
    prior_top: GaussianMlp,
    /// `prior_ladder[i − 1]` realizes `p(z_i | z_{i+1})`.
    prior_ladder: Vec<GaussianMlp>,
    enc_top: GaussianMlp,
    /// `enc_ladder[i − 1]` realizes `q(z_i | z_{i+1}, x)`.
    enc_ladder: Vec<GaussianMlp>,
    decoder: GaussianMlp,
    gru: Option<GruCell>,
    head: ForecastHead,
}

impl HyVaeModel {
    /// Full model with parameters initialized from `config.seed`.
    pub fn new(config: HyVaeConfig) -> Result<Self> {
        Self::build(config, Variant::Full)
    }

    /// Builds one of the ablation variants from a base config.
    pub fn variant(config: &HyVaeConfig, kind: Variant) -> Result<Self> {
        let mut config = config.clone();
        if kind == Variant::NoSubseq {
            config.l = 1;
            config.ladder = 1;
        }
        Self::build(config, kind)
    }

    pub(crate) fn build(config: HyVaeConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        if variant == Variant::NoSubseq && (config.l != 1 || config.ladder != 1) {
            return Err(Error::Config(
                "no_subseq requires l = 1 and L = 1".into(),
            ));
        }
        let mut rng = Rng::with_stream(config.seed, 0);
        let mut params = ParamStore::new();
        let HyVaeConfig {
            l,
            ladder,
            d_z,
            d_h,
            n,
            ..
        } = config;
        let hidden = d_z;
        let h_width = if variant == Variant::NoEntire { 0 } else { d_h };

        let prior_top = GaussianMlp::new(&mut params, "prior_top", d_z + h_width, hidden, d_z, &mut rng);
        let prior_ladder = (1..ladder)
            .map(|i| {
                GaussianMlp::new(&mut params, &format!("prior_ladder.{i}"), d_z, hidden, d_z, &mut rng)
            })
            .collect();
        let enc_top = GaussianMlp::new(&mut params, "enc_top", h_width + l + d_z, hidden, d_z, &mut rng);
        let enc_ladder = (1..ladder)
            .map(|i| {
                GaussianMlp::new(&mut params, &format!("enc_ladder.{i}"), d_z + l, hidden, d_z, &mut rng)
            })
            .collect();
        let decoder = GaussianMlp::new(&mut params, "decoder", d_z + h_width, hidden, l, &mut rng);
        let gru = (h_width > 0).then(|| GruCell::new(&mut params, "gru", l, d_h, &mut rng));
        let head = ForecastHead::new(&mut params, "head", h_width + ladder * d_z, n, &mut rng);

        Ok(HyVaeModel {
            config,
            variant,
            normalizer: Normalizer::identity(),
            params,
            prior_top,
            prior_ladder,
            enc_top,
            enc_ladder,
            decoder,
            gru,
            head,
        })
    }

    pub fn config(&self) -> &HyVaeConfig {
        &self.config
    }

    pub fn kind(&self) -> Variant {
        self.variant
    }

    pub fn normalizer(&self) -> Normalizer {
        self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) {
        self.normalizer = normalizer;
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn has_temporal_state(&self) -> bool {
        self.gru.is_some()
    }

    /// Inference for one subsequence. `h_prev` must be given exactly when
    /// the model carries temporal state.
    pub fn encode_step(
        &self,
        pass: &mut Pass,
        h_prev: Option<Var>,
        z1_prev: Var,
        x_t: Var,
        noise: &mut dyn Noise,
    ) -> Result<StepPosterior> {
        self.check_hidden(h_prev)?;
        let mut top_in = Vec::with_capacity(3);
        top_in.extend(h_prev);
        top_in.push(x_t);
        top_in.push(z1_prev);
        let top_in = pass.graph.concat(&top_in, 1)?;
        let q_top = self.enc_top.forward(pass, top_in)?;
        let z_top = gaussian::rsample(&mut pass.graph, &q_top, noise)?;

        let mut posteriors = vec![q_top];
        let mut samples = vec![z_top];
        for net in self.enc_ladder.iter().rev() {
            let above = *samples.last().unwrap();
            let input = pass.graph.concat(&[above, x_t], 1)?;
            let q = net.forward(pass, input)?;
            let z = gaussian::rsample(&mut pass.graph, &q, noise)?;
            posteriors.push(q);
            samples.push(z);
        }
        Ok(StepPosterior {
            posteriors,
            samples,
        })
    }

    /// Prior conditionals for one subsequence, top to bottom; the ladder
    /// levels are evaluated at the posterior samples in `samples`.
    pub fn prior_step(
        &self,
        pass: &mut Pass,
        h_prev: Option<Var>,
        z1_prev: Var,
        samples: &[Var],
    ) -> Result<Vec<DiagonalGaussian>> {
        self.check_hidden(h_prev)?;
        if samples.len() != self.config.ladder {
            return Err(Error::shape(
                "prior_step",
                &[self.config.ladder],
                &[samples.len()],
            ));
        }
        let mut top_in = vec![z1_prev];
        top_in.extend(h_prev);
        let top_in = pass.graph.concat(&top_in, 1)?;
        let mut priors = vec![self.prior_top.forward(pass, top_in)?];
        for (net, &above) in self.prior_ladder.iter().rev().zip(samples) {
            priors.push(net.forward(pass, above)?);
        }
        Ok(priors)
    }

    fn check_hidden(&self, h_prev: Option<Var>) -> Result<()> {
        if h_prev.is_some() != self.has_temporal_state() {
            return Err(Error::invalid(
                "hyvae",
                if self.has_temporal_state() {
                    "this model needs a hidden state"
                } else {
                    "this variant has no hidden state"
                },
            ));
        }
        Ok(())
    }

    fn check_windows(&self, windows: &Tensor) -> Result<()> {
        let s = windows.shape();
        if s.len() != 2 || s[1] != self.config.m {
            return Err(Error::shape("window", &[s[0], self.config.m], s));
        }
        Ok(())
    }

    /// Unrolls the recursion over all subsequences of `windows: [B × m]`.
    /// With `with_elbo` false only the inference path runs.
    fn unroll(
        &self,
        pass: &mut Pass,
        windows: &Tensor,
        noise: &mut dyn Noise,
        with_elbo: bool,
    ) -> Result<Unrolled> {
        self.check_windows(windows)?;
        let b = windows.rows();
        let HyVaeConfig { l, d_z, d_h, .. } = self.config;
        let temporal = self.has_temporal_state();

        let mut h = temporal.then(|| pass.graph.constant(Tensor::zeros(&[b, d_h])));
        let zeros_z = pass.graph.constant(Tensor::zeros(&[b, d_z]));
        let mut z1_prev = zeros_z;
        let mut acc: Option<[Var; 3]> = None;
        let mut last = None;

        for t in 0..self.config.subsequences() {
            let x_t = pass.graph.constant(columns(windows, t, l));
            let step = self.encode_step(pass, h, z1_prev, x_t, noise)?;

            if with_elbo {
                let priors = self.prior_step(pass, h, z1_prev, &step.samples)?;
                let g = &mut pass.graph;
                let kl_top = gaussian::kl(g, &step.posteriors[0], &priors[0])?;
                let mut kl_lad: Option<Var> = None;
                for (q, p) in step.posteriors.iter().zip(&priors).skip(1) {
                    let k = gaussian::kl(g, q, p)?;
                    kl_lad = Some(match kl_lad {
                        Some(s) => g.add(s, k)?,
                        None => k,
                    });
                }
                let mut dec_in = vec![step.bottom()];
                dec_in.extend(h);
                let dec_in = g.concat(&dec_in, 1)?;
                let px = self.decoder.forward(pass, dec_in)?;
                let g = &mut pass.graph;
                let rec = gaussian::log_prob(g, &px, x_t)?;
                acc = Some(match acc {
                    None => {
                        let kl_lad = kl_lad.unwrap_or_else(|| g.constant(Tensor::zeros(&[b, 1])));
                        [rec, kl_lad, kl_top]
                    }
                    Some([r, kl, kt]) => [
                        g.add(r, rec)?,
                        match kl_lad {
                            Some(k) => g.add(kl, k)?,
                            None => kl,
                        },
                        g.add(kt, kl_top)?,
                    ],
                });
            }

            if let (Some(cell), Some(hp)) = (&self.gru, h) {
                h = Some(cell.step(pass, hp, x_t)?);
            }
            if temporal {
                z1_prev = step.bottom();
            }
            last = Some(step);
        }

        Ok(Unrolled {
            terms: acc,
            hidden: h,
            last: last.expect("T >= 1"),
        })
    }

    /// Single-sample estimate of `ℓ_enc` for every row of `windows`.
    pub fn elbo(
        &self,
        pass: &mut Pass,
        windows: &Tensor,
        noise: &mut dyn Noise,
        beta: f64,
    ) -> Result<ElboPass> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid("elbo", format!("beta {beta} outside [0, 1]")));
        }
        let un = self.unroll(pass, windows, noise, true)?;
        let [recon, kl_ladder, kl_temporal] = un.terms.expect("elbo terms requested");
        let g = &mut pass.graph;
        let kl = g.add(kl_ladder, kl_temporal)?;
        let kl = g.affine(kl, beta, 0.0);
        let elbo = g.sub(recon, kl)?;
        Ok(ElboPass {
            recon,
            kl_ladder,
            kl_temporal,
            elbo,
            beta,
            final_hidden: un.hidden,
            final_step: un.last,
        })
    }

    fn head_features(&self, pass: &mut Pass, hidden: Option<Var>, step: &StepPosterior) -> Result<Var> {
        let mut parts: Vec<Var> = hidden.into_iter().collect();
        parts.extend(step.samples.iter().rev());
        pass.graph.concat(&parts, 1)
    }

    /// Total training loss `mean_rows(−ℓ_enc + ℓ_pred)` for a batch.
    pub fn loss(
        &self,
        pass: &mut Pass,
        windows: &Tensor,
        targets: &Tensor,
        noise: &mut dyn Noise,
        beta: f64,
    ) -> Result<Loss> {
        let b = windows.rows();
        if targets.shape() != [b, self.config.n] {
            return Err(Error::shape("loss targets", &[b, self.config.n], targets.shape()));
        }
        let ep = self.elbo(pass, windows, noise, beta)?;
        let features = self.head_features(pass, ep.final_hidden, &ep.final_step)?;
        let pred = self.head.forward(pass, features)?;
        let g = &mut pass.graph;
        let y = g.constant(targets.clone());
        let resid = g.sub(y, pred)?;
        let sq = g.square(resid);
        let pred_loss = g.mean(sq, Some(1))?;
        let neg_elbo = g.neg(ep.elbo);
        let per_row = g.add(neg_elbo, pred_loss)?;
        let total = g.mean(per_row, None)?;

        let mean_of = |v: Var| -> f64 {
            let d = g.value(v).data();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let elbo = ElboBreakdown {
            recon: mean_of(ep.recon),
            kl_ladder: mean_of(ep.kl_ladder),
            kl_temporal: mean_of(ep.kl_temporal),
            beta,
        };
        let pred = mean_of(pred_loss);
        Ok(Loss { total, elbo, pred })
    }

    /// Predicts `[B × n]` from normalized windows `[B × m]`.
    pub fn forecast(
        &self,
        windows: &Tensor,
        mode: ForecastMode,
        rng: Option<&mut Rng>,
    ) -> Result<Tensor> {
        let mut pass = Pass::frozen(&self.params);
        let mut zero = ZeroNoise;
        let noise: &mut dyn Noise = match (mode, rng) {
            (ForecastMode::Mean, _) => &mut zero,
            (ForecastMode::Sample, Some(r)) => r,
            (ForecastMode::Sample, None) => {
                return Err(Error::invalid("forecast", "sample mode needs a generator"))
            }
        };
        let un = self.unroll(&mut pass, windows, noise, false)?;
        let features = self.head_features(&mut pass, un.hidden, &un.last)?;
        let y = self.head.forward(&mut pass, features)?;
        Ok(pass.graph.value(y).clone())
    }

    /// Convenience wrapper for one window.
    pub fn forecast_one(&self, window: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::row(window);
        Ok(self.forecast(&t, ForecastMode::Mean, None)?.into_data())
    }
}

struct Unrolled {
    terms: Option<[Var; 3]>,
    hidden: Option<Var>,
    last: StepPosterior,
}

/// Columns `start .. start + len` of a `[B × m]` matrix.
fn columns(windows: &Tensor, start: usize, len: usize) -> Tensor {
    let b = windows.rows();
    let mut out = Vec::with_capacity(b * len);
    for r in 0..b {
        out.extend_from_slice(&windows.row_slice(r)[start..start + len]);
    }
    Tensor::from_parts(vec![b, len], out)
}
