//! The prediction model: shared LSTM encoder, pooling module, maneuver
//! recognition heads, and an LSTM decoder emitting per-step Gaussian
//! parameters. With the maneuver module enabled the output is a 9-mode
//! mixture over (location, acceleration) pairs weighted by the head
//! posteriors; disabled, it is a single unconditioned Gaussian sequence.

use crate::dataset::{AccelManeuver, LocationManeuver, ManeuverLabel, SceneSample};
use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, FramePoint, PolarPoint};
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::{init_lstm_params, lstm_step, LstmVars, LEAKY_RELU_SLOPE};
use crate::pooling::{
    self, build_social_tensor, init_pool_params, pool_csp, pool_relational, pool_slstm,
    pooled_len, GridConfig, NeighborhoodConfig, PoolingStrategy,
};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Location-wise and acceleration-wise class counts.
pub const LOC_CLASSES: usize = 3;
pub const ACC_CLASSES: usize = 3;

/// Output parameterization of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Correlated Gaussian over Cartesian position: (mu_x, mu_y, sigma_x,
    /// sigma_y, rho).
    Bivariate,
    /// Diagonal Gaussian over (r, phi, v_r).
    Trivariate,
}

impl OutputKind {
    pub fn param_dim(&self) -> usize {
        match self {
            OutputKind::Bivariate => 5,
            OutputKind::Trivariate => 6,
        }
    }

    pub fn mean_dim(&self) -> usize {
        match self {
            OutputKind::Bivariate => 2,
            OutputKind::Trivariate => 3,
        }
    }

    /// Per-component factor applied to raw mean outputs: position-like
    /// components get the model's `mu_scale`, angles and speeds unit scale.
    fn mu_component_scales(&self, mu_scale: f64) -> Vec<f64> {
        match self {
            OutputKind::Bivariate => vec![mu_scale, mu_scale],
            OutputKind::Trivariate => vec![mu_scale, 1.0, 1.0],
        }
    }

    /// Raw-bias warm start for the sigma components: wide where the target
    /// spread is wide (longitudinal distance, radius; exp(3) ~ 20 m),
    /// narrow for the lateral offset and the angle, moderate for speeds.
    fn sigma_bias_init(&self) -> Vec<f64> {
        match self {
            OutputKind::Bivariate => vec![0.0, 3.0],
            OutputKind::Trivariate => vec![3.0, -1.0, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub strategy: PoolingStrategy,
    /// Whether the maneuver recognition module is part of the model.
    pub maneuvers: bool,
    pub output: OutputKind,
    /// Per-frame input embedding width.
    pub embed_width: usize,
    /// Encoder LSTM hidden size.
    pub enc_hidden: usize,
    /// Decoder LSTM hidden size.
    pub dec_hidden: usize,
    /// MLP width of the relational pooling strategies.
    pub mlp_width: usize,
    /// Per-cell embedding channels of the grid strategies.
    pub grid_embed: usize,
    /// History frames per vehicle.
    pub history_len: usize,
    /// Future frames to decode.
    pub future_len: usize,
    /// Input conditioning: positions, distances, and speeds are multiplied
    /// by this before embedding (angles pass through). Folds into the
    /// affine embed weights, so it is an initialization-scale choice.
    pub pos_scale: f64,
    /// Output conditioning: the mean head emits means in units of
    /// 1/mu_scale meters; the decoder multiplies by this. Folds into the
    /// affine head weights.
    pub mu_scale: f64,
    pub grid: GridConfig,
    pub neighborhood: NeighborhoodConfig,
}

impl ModelConfig {
    /// Default widths for a strategy; the trivariate output belongs to the
    /// full polar + radial-velocity model.
    pub fn for_strategy(strategy: PoolingStrategy, maneuvers: bool) -> Self {
        ModelConfig {
            strategy,
            maneuvers,
            output: match strategy {
                PoolingStrategy::PolarVr => OutputKind::Trivariate,
                _ => OutputKind::Bivariate,
            },
            embed_width: 32,
            enc_hidden: 64,
            dec_hidden: 128,
            mlp_width: 256,
            grid_embed: pooling::DEFAULT_GRID_EMBED,
            history_len: 16,
            future_len: 25,
            pos_scale: 0.1,
            mu_scale: 10.0,
            grid: GridConfig::default(),
            neighborhood: NeighborhoodConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_width == 0
            || self.enc_hidden == 0
            || self.dec_hidden == 0
            || self.mlp_width == 0
            || self.history_len == 0
            || self.future_len == 0
        {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.pos_scale <= 0.0 || self.mu_scale <= 0.0 {
            return Err(Error::Config("feature/mean scales must be positive".into()));
        }
        if self.grid_embed == 0 {
            return Err(Error::Config("grid embed width must be positive".into()));
        }
        self.grid.validate()?;
        self.neighborhood.validate()?;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.strategy.feature_dim()
    }

    pub fn pooled_len(&self) -> usize {
        pooled_len(self.strategy, &self.grid, self.mlp_width, self.grid_embed)
    }

    /// Width of the decoder context: trajectory encoding, pooling vector,
    /// and (when enabled) the two maneuver one-hots.
    pub fn context_len(&self) -> usize {
        self.enc_hidden
            + self.pooled_len()
            + if self.maneuvers {
                LOC_CLASSES + ACC_CLASSES
            } else {
                0
            }
    }
}

/// Per-timestep Gaussian parameter handles on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussStepVars {
    /// Mean vector, `[2]` or `[3]`.
    pub mu: Var,
    /// Standard deviations (positive via exp), same length as `mu`.
    pub sigma: Var,
    /// Correlation in (-1, 1) via tanh; bivariate only.
    pub rho: Option<Var>,
}

/// A decoded future: F steps of Gaussian parameters on the tape.
#[derive(Debug, Clone)]
pub struct DecodedSeq {
    pub kind: OutputKind,
    pub steps: Vec<GaussStepVars>,
}

/// Plain-value Gaussian parameters of one step, bivariate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateStep {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

/// Plain-value Gaussian parameters of one step, trivariate (diagonal) form
/// over (r, phi, v_r).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivariateStep {
    pub mu_r: f64,
    pub mu_phi: f64,
    pub mu_v: f64,
    pub sigma_r: f64,
    pub sigma_phi: f64,
    pub sigma_v: f64,
}

/// Gaussian parameters for every future step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GaussianSeq {
    Bivariate(Vec<BivariateStep>),
    Trivariate(Vec<TrivariateStep>),
}

impl GaussianSeq {
    pub fn len(&self) -> usize {
        match self {
            GaussianSeq::Bivariate(s) => s.len(),
            GaussianSeq::Trivariate(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean positions in Cartesian meters; trivariate (polar) means are
    /// mapped through the polar-to-Cartesian conversion pointwise.
    pub fn mean_xy(&self) -> Vec<(f64, f64)> {
        match self {
            GaussianSeq::Bivariate(steps) => steps.iter().map(|s| (s.mu_x, s.mu_y)).collect(),
            GaussianSeq::Trivariate(steps) => steps
                .iter()
                .map(|s| {
                    polar_to_cartesian(&PolarPoint {
                        r: s.mu_r,
                        phi: s.mu_phi,
                        v_r: Some(s.mu_v),
                    })
                })
                .collect(),
        }
    }
}

/// Posterior over the two maneuver sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverPosterior {
    pub p_loc: [f64; LOC_CLASSES],
    pub p_acc: [f64; ACC_CLASSES],
}

impl ManeuverPosterior {
    pub fn argmax(&self) -> (LocationManeuver, AccelManeuver) {
        (
            LocationManeuver::from_index(argmax(&self.p_loc)),
            AccelManeuver::from_index(argmax(&self.p_acc)),
        )
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// One mixture component of the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMode {
    /// The conditioning maneuver pair; `None` when the maneuver module is
    /// disabled and the mode is unconditioned.
    pub maneuver: Option<(LocationManeuver, AccelManeuver)>,
    pub weight: f64,
    pub seq: GaussianSeq,
}

/// The model's output distribution: mixture modes plus the posterior that
/// produced the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub modes: Vec<PredictedMode>,
    pub posterior: Option<ManeuverPosterior>,
}

impl PredictionOutput {
    /// The highest-weight mode.
    pub fn map_mode(&self) -> &PredictedMode {
        self.modes
            .iter()
            .max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap())
            .expect("prediction has at least one mode")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Decode all maneuver combinations, weighted by the posterior.
    Full,
    /// Decode only the maximum a-posteriori maneuver pair.
    Map,
}

/// Tape-level results of a training forward pass: the decoded sequence for
/// the teacher-forced maneuver pair and the maneuver head outputs.
pub struct TrainForward {
    pub decoded: DecodedSeq,
    /// (p_loc, p_acc) softmax outputs when the maneuver module is enabled.
    pub heads: Option<(Var, Var)>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh model with uniformly initialized weights.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        params.init_uniform("embed.w", &[cfg.embed_width, cfg.feature_dim()], &mut rng);
        params.insert_zeros("embed.b", &[cfg.embed_width]);
        init_lstm_params(&mut params, "enc", cfg.embed_width, cfg.enc_hidden, &mut rng);
        init_pool_params(
            &mut params,
            "pool",
            cfg.strategy,
            cfg.enc_hidden,
            cfg.mlp_width,
            cfg.grid_embed,
            &mut rng,
        );
        if cfg.maneuvers {
            let head_in = cfg.enc_hidden + cfg.pooled_len();
            params.init_uniform("mnv.loc.w", &[LOC_CLASSES, head_in], &mut rng);
            params.insert_zeros("mnv.loc.b", &[LOC_CLASSES]);
            params.init_uniform("mnv.acc.w", &[ACC_CLASSES, head_in], &mut rng);
            params.insert_zeros("mnv.acc.b", &[ACC_CLASSES]);
        }
        init_lstm_params(&mut params, "dec", cfg.context_len(), cfg.dec_hidden, &mut rng);
        params.init_uniform(
            "head.w",
            &[cfg.output.param_dim(), cfg.dec_hidden],
            &mut rng,
        );
        let mean_dim = cfg.output.mean_dim();
        let mut head_bias = vec![0.0; cfg.output.param_dim()];
        head_bias[mean_dim..2 * mean_dim].copy_from_slice(&cfg.output.sigma_bias_init());
        params.insert("head.b", &[cfg.output.param_dim()], head_bias);

        Ok(Model { cfg, params })
    }

    /// Wrap an existing parameter store (e.g. a loaded checkpoint).
    pub fn from_parts(cfg: ModelConfig, params: ParamStore) -> Result<Model> {
        cfg.validate()?;
        for name in ["embed.w", "enc.w", "dec.w", "head.w"] {
            params.require(name)?;
        }
        Ok(Model { cfg, params })
    }

    fn frame_features(&self, p: &FramePoint) -> Vec<f64> {
        let s = self.cfg.pos_scale;
        match self.cfg.strategy {
            PoolingStrategy::Slstm | PoolingStrategy::Csp | PoolingStrategy::Sgan => {
                vec![p.dx * s, p.dy * s]
            }
            PoolingStrategy::Polar => vec![p.r * s, p.phi],
            PoolingStrategy::PolarVr => vec![p.r * s, p.phi, p.v_r * s],
        }
    }

    fn encode_history(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        history: &[FramePoint],
    ) -> Result<Var> {
        if history.len() != self.cfg.history_len {
            return Err(Error::shape(
                "encode history length",
                &[self.cfg.history_len],
                &[history.len()],
            ));
        }
        let enc = LstmVars {
            w: bound.var("enc.w"),
            u: bound.var("enc.u"),
            b: bound.var("enc.b"),
        };
        let ew = bound.var("embed.w");
        let eb = bound.var("embed.b");
        let mut h = tape.zeros(&[self.cfg.enc_hidden]);
        let mut c = tape.zeros(&[self.cfg.enc_hidden]);
        for point in history {
            let x = tape.leaf_vector(self.frame_features(point));
            let emb = tape.affine(ew, eb, x)?;
            let act = tape.leaky_relu(emb, LEAKY_RELU_SLOPE);
            let (h2, c2) = lstm_step(tape, &enc, act, h, c)?;
            h = h2;
            c = c2;
        }
        Ok(h)
    }

    /// Run the shared encoder over the ego and every neighbor history.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        sample: &SceneSample,
    ) -> Result<(Var, Vec<Var>)> {
        let ego = self.encode_history(tape, bound, &sample.ego_history)?;
        let neighbors = sample
            .neighbors
            .iter()
            .map(|nb| self.encode_history(tape, bound, &nb.history))
            .collect::<Result<Vec<_>>>()?;
        Ok((ego, neighbors))
    }

    /// Pooling vector of the scene under the configured strategy.
    pub fn pool(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        sample: &SceneSample,
        ego_hidden: Var,
        neighbor_hiddens: &[Var],
    ) -> Result<Var> {
        if let Some(mode) = self.cfg.strategy.relational_mode() {
            let mut entries = Vec::new();
            for (nb, hidden) in sample.neighbors.iter().zip(neighbor_hiddens) {
                let at_anchor = *nb.at_anchor();
                if self.cfg.neighborhood.contains(at_anchor.dx, at_anchor.dy) {
                    entries.push((*hidden, at_anchor));
                }
            }
            pool_relational(
                tape,
                bound,
                "pool",
                &entries,
                mode,
                self.cfg.mlp_width,
                self.cfg.pos_scale,
            )
        } else {
            let candidates: Vec<pooling::NeighborCandidate> = sample
                .neighbors
                .iter()
                .map(|nb| {
                    let p = nb.at_anchor();
                    pooling::NeighborCandidate {
                        id: nb.id,
                        dx: p.dx,
                        dy: p.dy,
                        lane: nb.lane,
                    }
                })
                .collect();
            let social = build_social_tensor(
                tape,
                &candidates,
                neighbor_hiddens,
                ego_hidden,
                sample.ego_lane,
                &self.cfg.grid,
            )?;
            match self.cfg.strategy {
                PoolingStrategy::Slstm => pool_slstm(tape, bound, "pool", social),
                PoolingStrategy::Csp => pool_csp(tape, bound, "pool", social),
                _ => unreachable!("relational strategies handled above"),
            }
        }
    }

    /// Maneuver heads: two affine + softmax layers over the concatenated
    /// trajectory encoding and pooling vector.
    pub fn recognize(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ego_hidden: Var,
        pool_vec: Var,
    ) -> Result<(Var, Var)> {
        let joint = tape.concat(&[ego_hidden, pool_vec])?;
        let loc_logits = tape.affine(bound.var("mnv.loc.w"), bound.var("mnv.loc.b"), joint)?;
        let acc_logits = tape.affine(bound.var("mnv.acc.w"), bound.var("mnv.acc.b"), joint)?;
        Ok((tape.softmax(loc_logits), tape.softmax(acc_logits)))
    }

    fn one_hot(&self, tape: &mut Tape, index: usize, len: usize) -> Var {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        tape.leaf_vector(v)
    }

    /// Decoder context for a maneuver pair (`None` when the module is
    /// disabled).
    fn context(
        &self,
        tape: &mut Tape,
        ego_hidden: Var,
        pool_vec: Var,
        maneuver: Option<(LocationManeuver, AccelManeuver)>,
    ) -> Result<Var> {
        match maneuver {
            Some((loc, acc)) => {
                let loc_hot = self.one_hot(tape, loc.index(), LOC_CLASSES);
                let acc_hot = self.one_hot(tape, acc.index(), ACC_CLASSES);
                tape.concat(&[ego_hidden, pool_vec, loc_hot, acc_hot])
            }
            None => tape.concat(&[ego_hidden, pool_vec]),
        }
    }

    /// Unroll the decoder LSTM with the fixed context as input at every
    /// step, mapping raw head outputs to valid Gaussian parameters.
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, context: Var) -> Result<DecodedSeq> {
        if tape.shape(context) != [self.cfg.context_len()] {
            return Err(Error::shape(
                "decoder context",
                &[self.cfg.context_len()],
                tape.shape(context),
            ));
        }
        let dec = LstmVars {
            w: bound.var("dec.w"),
            u: bound.var("dec.u"),
            b: bound.var("dec.b"),
        };
        let hw = bound.var("head.w");
        let hb = bound.var("head.b");
        let mean_dim = self.cfg.output.mean_dim();
        let mut h = tape.zeros(&[self.cfg.dec_hidden]);
        let mut c = tape.zeros(&[self.cfg.dec_hidden]);
        let mut steps = Vec::with_capacity(self.cfg.future_len);
        for _ in 0..self.cfg.future_len {
            let (h2, c2) = lstm_step(tape, &dec, context, h, c)?;
            h = h2;
            c = c2;
            let raw = tape.affine(hw, hb, h)?;
            let mu_scales = self.cfg.output.mu_component_scales(self.cfg.mu_scale);
            let mu_parts = mu_scales
                .iter()
                .enumerate()
                .map(|(i, &scale)| {
                    let part = tape.slice(raw, i, 1)?;
                    Ok(tape.scale(part, scale))
                })
                .collect::<Result<Vec<_>>>()?;
            let mu = tape.concat(&mu_parts)?;
            // Raw scale/correlation outputs are clamped before squashing so
            // sigma stays strictly positive and |rho| strictly below 1
            // (tanh saturates past ~19). The lower bound also floors sigma
            // at ~5 cm, which keeps mixture components from collapsing to
            // near-deltas when a sample is fit exactly.
            let sigma_raw = tape.slice(raw, mean_dim, mean_dim)?;
            let sigma_bounded = tape.clamp(sigma_raw, -3.0, 40.0);
            let sigma = tape.exp(sigma_bounded);
            let rho = match self.cfg.output {
                OutputKind::Bivariate => {
                    let rho_raw = tape.slice(raw, 2 * mean_dim, 1)?;
                    let rho_bounded = tape.clamp(rho_raw, -15.0, 15.0);
                    Some(tape.tanh(rho_bounded))
                }
                OutputKind::Trivariate => None,
            };
            steps.push(GaussStepVars { mu, sigma, rho });
        }
        Ok(DecodedSeq {
            kind: self.cfg.output,
            steps,
        })
    }

    /// Training-time forward pass: teacher-forced decoding of the
    /// ground-truth maneuver pair.
    pub fn forward_training(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        sample: &SceneSample,
    ) -> Result<TrainForward> {
        let (ego_hidden, neighbor_hiddens) = self.encode(tape, bound, sample)?;
        let pool_vec = self.pool(tape, bound, sample, ego_hidden, &neighbor_hiddens)?;
        let (heads, maneuver) = if self.cfg.maneuvers {
            let (p_loc, p_acc) = self.recognize(tape, bound, ego_hidden, pool_vec)?;
            (
                Some((p_loc, p_acc)),
                Some((sample.label.location, sample.label.acceleration)),
            )
        } else {
            (None, None)
        };
        let ctx = self.context(tape, ego_hidden, pool_vec, maneuver)?;
        let decoded = self.decode(tape, bound, ctx)?;
        Ok(TrainForward { decoded, heads })
    }

    fn extract_seq(&self, tape: &Tape, decoded: &DecodedSeq) -> GaussianSeq {
        match decoded.kind {
            OutputKind::Bivariate => GaussianSeq::Bivariate(
                decoded
                    .steps
                    .iter()
                    .map(|s| {
                        let mu = tape.values(s.mu);
                        let sigma = tape.values(s.sigma);
                        let rho = tape.values(s.rho.expect("bivariate step has rho"))[0];
                        BivariateStep {
                            mu_x: mu[0],
                            mu_y: mu[1],
                            sigma_x: sigma[0],
                            sigma_y: sigma[1],
                            rho,
                        }
                    })
                    .collect(),
            ),
            OutputKind::Trivariate => GaussianSeq::Trivariate(
                decoded
                    .steps
                    .iter()
                    .map(|s| {
                        let mu = tape.values(s.mu);
                        let sigma = tape.values(s.sigma);
                        TrivariateStep {
                            mu_r: mu[0],
                            mu_phi: mu[1],
                            mu_v: mu[2],
                            sigma_r: sigma[0],
                            sigma_phi: sigma[1],
                            sigma_v: sigma[2],
                        }
                    })
                    .collect(),
            ),
        }
    }

    /// Inference: the mixture over future trajectories.
    pub fn predict(&self, sample: &SceneSample, mode: PredictMode) -> Result<PredictionOutput> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let (ego_hidden, neighbor_hiddens) = self.encode(&mut tape, &bound, sample)?;
        let pool_vec = self.pool(&mut tape, &bound, sample, ego_hidden, &neighbor_hiddens)?;

        if !self.cfg.maneuvers {
            let ctx = self.context(&mut tape, ego_hidden, pool_vec, None)?;
            let decoded = self.decode(&mut tape, &bound, ctx)?;
            return Ok(PredictionOutput {
                modes: vec![PredictedMode {
                    maneuver: None,
                    weight: 1.0,
                    seq: self.extract_seq(&tape, &decoded),
                }],
                posterior: None,
            });
        }

        let (p_loc_var, p_acc_var) = self.recognize(&mut tape, &bound, ego_hidden, pool_vec)?;
        let posterior = ManeuverPosterior {
            p_loc: tape.values(p_loc_var).try_into().expect("3 classes"),
            p_acc: tape.values(p_acc_var).try_into().expect("3 classes"),
        };

        let mut modes = Vec::new();
        match mode {
            PredictMode::Map => {
                let (loc, acc) = posterior.argmax();
                let ctx = self.context(&mut tape, ego_hidden, pool_vec, Some((loc, acc)))?;
                let decoded = self.decode(&mut tape, &bound, ctx)?;
                modes.push(PredictedMode {
                    maneuver: Some((loc, acc)),
                    weight: 1.0,
                    seq: self.extract_seq(&tape, &decoded),
                });
            }
            PredictMode::Full => {
                for p in 0..LOC_CLASSES {
                    for q in 0..ACC_CLASSES {
                        let loc = LocationManeuver::from_index(p);
                        let acc = AccelManeuver::from_index(q);
                        let ctx =
                            self.context(&mut tape, ego_hidden, pool_vec, Some((loc, acc)))?;
                        let decoded = self.decode(&mut tape, &bound, ctx)?;
                        modes.push(PredictedMode {
                            maneuver: Some((loc, acc)),
                            weight: posterior.p_loc[p] * posterior.p_acc[q],
                            seq: self.extract_seq(&tape, &decoded),
                        });
                    }
                }
            }
        }
        Ok(PredictionOutput {
            modes,
            posterior: Some(posterior),
        })
    }

    /// Ground-truth targets for the NLL, in the decoder's coordinate
    /// system.
    pub fn targets(&self, sample: &SceneSample) -> Vec<Vec<f64>> {
        sample
            .future
            .iter()
            .map(|p| match self.cfg.output {
                OutputKind::Bivariate => vec![p.dx, p.dy],
                OutputKind::Trivariate => vec![p.r, p.phi, p.v_r],
            })
            .collect()
    }
}

/// Teacher-forced label for the cross-entropy loss.
pub fn label_indices(label: &ManeuverLabel) -> (usize, usize) {
    (label.location.index(), label.acceleration.index())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::{EvalClass, NeighborHistory};
    use crate::geometry::RelativeFrame;

    pub(crate) fn toy_config(strategy: PoolingStrategy, maneuvers: bool) -> ModelConfig {
        let mut cfg = ModelConfig::for_strategy(strategy, maneuvers);
        cfg.embed_width = 6;
        cfg.enc_hidden = 8;
        cfg.dec_hidden = 10;
        cfg.mlp_width = 12;
        cfg.history_len = 5;
        cfg.future_len = 4;
        cfg
    }

    pub(crate) fn toy_sample(
        n_neighbors: usize,
        history_len: usize,
        future_len: usize,
    ) -> SceneSample {
        let mk = |k: f64, off: f64| {
            let dx = 0.3 * k + off;
            let dy = -10.0 + 2.0 * k + off;
            let polar = crate::geometry::cartesian_to_polar(dx, dy);
            FramePoint {
                dx,
                dy,
                r: polar.r,
                phi: polar.phi,
                v_r: 0.5 + 0.1 * k - off * 0.05,
            }
        };
        SceneSample {
            vehicle_id: 1,
            anchor_frame: 30,
            frame: RelativeFrame {
                origin_x: 5.0,
                origin_y: 100.0,
                origin_v: 22.0,
            },
            ego_lane: 3,
            ego_history: (0..history_len).map(|i| mk(i as f64, 0.0)).collect(),
            neighbors: (0..n_neighbors)
                .map(|j| NeighborHistory {
                    id: 10 + j as u64,
                    lane: 2 + j as u32,
                    history: (0..history_len)
                        .map(|i| mk(i as f64, 1.5 * (j as f64 + 1.0)))
                        .collect(),
                })
                .collect(),
            future: (0..future_len).map(|i| mk(i as f64 + 5.0, 0.0)).collect(),
            label: ManeuverLabel {
                location: LocationManeuver::Left,
                acceleration: AccelManeuver::Speed,
                eval_class: EvalClass::Left,
            },
        }
    }

    #[test]
    fn zero_history_zero_params_zero_hidden() {
        let cfg = toy_config(PoolingStrategy::Sgan, false);
        let mut model = Model::init(cfg, 0).unwrap();
        for (_, p) in model.params.iter_mut() {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut sample = toy_sample(0, 5, 4);
        for p in sample.ego_history.iter_mut() {
            *p = FramePoint {
                dx: 0.0,
                dy: 0.0,
                r: 0.0,
                phi: 0.0,
                v_r: 0.0,
            };
        }
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let (ego, _) = model.encode(&mut tape, &bound, &sample).unwrap();
        assert!(tape.values(ego).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_histories_share_weights() {
        let cfg = toy_config(PoolingStrategy::Polar, false);
        let model = Model::init(cfg, 3).unwrap();
        let mut sample = toy_sample(1, 5, 4);
        sample.neighbors[0].history = sample.ego_history.clone();
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let (ego, nbs) = model.encode(&mut tape, &bound, &sample).unwrap();
        assert_eq!(tape.values(ego), tape.values(nbs[0]));
    }

    #[test]
    fn recognize_uniform_for_zero_input() {
        let cfg = toy_config(PoolingStrategy::Sgan, true);
        let mut model = Model::init(cfg, 1).unwrap();
        for name in ["mnv.loc.w", "mnv.loc.b", "mnv.acc.w", "mnv.acc.b"] {
            model
                .params
                .get_mut(name)
                .unwrap()
                .values
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let ego = tape.zeros(&[model.cfg.enc_hidden]);
        let pool = tape.zeros(&[model.cfg.pooled_len()]);
        let (p_loc, p_acc) = model.recognize(&mut tape, &bound, ego, pool).unwrap();
        for v in tape.values(p_loc).iter().chain(tape.values(p_acc)) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_sums_to_one_for_random_inputs() {
        let cfg = toy_config(PoolingStrategy::Sgan, true);
        let model = Model::init(cfg, 11).unwrap();
        let mut rng = Rng::seed_from_u64(12);
        for _ in 0..20 {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let ego_vals: Vec<f64> = (0..model.cfg.enc_hidden)
                .map(|_| rng.uniform(-2.0, 2.0))
                .collect();
            let pool_vals: Vec<f64> = (0..model.cfg.pooled_len())
                .map(|_| rng.uniform(-2.0, 2.0))
                .collect();
            let ego = tape.leaf_vector(ego_vals);
            let pool = tape.leaf_vector(pool_vals);
            let (p_loc, p_acc) = model.recognize(&mut tape, &bound, ego, pool).unwrap();
            assert!((tape.values(p_loc).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((tape.values(p_acc).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn decoder_ranges_valid_for_extreme_raws() {
        let cfg = toy_config(PoolingStrategy::Slstm, false);
        let mut model = Model::init(cfg, 2).unwrap();
        // Huge head bias drives raw outputs to +-1000.
        let pd = model.cfg.output.param_dim();
        model.params.get_mut("head.w").unwrap().values.fill(0.0);
        let bias = model.params.get_mut("head.b").unwrap();
        bias.values = (0..pd)
            .map(|i| if i % 2 == 0 { 1000.0 } else { -1000.0 })
            .collect();
        let sample = toy_sample(0, 5, 4);
        let out = model.predict(&sample, PredictMode::Full).unwrap();
        match &out.modes[0].seq {
            GaussianSeq::Bivariate(steps) => {
                for s in steps {
                    assert!(s.sigma_x > 0.0 && s.sigma_y > 0.0);
                    assert!(s.rho.abs() < 1.0);
                    assert!(s.rho.is_finite() && s.sigma_x.is_finite());
                }
            }
            GaussianSeq::Trivariate(_) => unreachable!(),
        }
    }

    #[test]
    fn full_mode_weights_sum_to_one() {
        let cfg = toy_config(PoolingStrategy::PolarVr, true);
        let model = Model::init(cfg, 4).unwrap();
        let sample = toy_sample(2, 5, 4);
        let out = model.predict(&sample, PredictMode::Full).unwrap();
        assert_eq!(out.modes.len(), 9);
        let total: f64 = out.modes.iter().map(|m| m.weight).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn map_mode_matches_argmax() {
        let cfg = toy_config(PoolingStrategy::PolarVr, true);
        let model = Model::init(cfg, 5).unwrap();
        let sample = toy_sample(2, 5, 4);
        let out = model.predict(&sample, PredictMode::Map).unwrap();
        assert_eq!(out.modes.len(), 1);
        assert_eq!(out.modes[0].weight, 1.0);
        let posterior = out.posterior.unwrap();
        assert_eq!(out.modes[0].maneuver.unwrap(), posterior.argmax());
    }

    #[test]
    fn maneuvers_off_single_unconditioned_mode() {
        let cfg = toy_config(PoolingStrategy::Csp, false);
        let model = Model::init(cfg, 6).unwrap();
        let sample = toy_sample(1, 5, 4);
        let out = model.predict(&sample, PredictMode::Full).unwrap();
        assert_eq!(out.modes.len(), 1);
        assert_eq!(out.modes[0].weight, 1.0);
        assert!(out.modes[0].maneuver.is_none());
        assert!(out.posterior.is_none());
    }

    #[test]
    fn predict_is_deterministic() {
        let cfg = toy_config(PoolingStrategy::Sgan, true);
        let model = Model::init(cfg, 7).unwrap();
        let sample = toy_sample(3, 5, 4);
        let a = model.predict(&sample, PredictMode::Full).unwrap();
        let b = model.predict(&sample, PredictMode::Full).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn neighbor_permutation_leaves_relational_prediction_unchanged() {
        let cfg = toy_config(PoolingStrategy::PolarVr, true);
        let model = Model::init(cfg, 8).unwrap();
        let mut sample = toy_sample(3, 5, 4);
        let base = model.predict(&sample, PredictMode::Full).unwrap();
        sample.neighbors.rotate_left(1);
        let rotated = model.predict(&sample, PredictMode::Full).unwrap();
        assert_eq!(base, rotated);
    }

    #[test]
    fn history_length_mismatch_is_shape_error() {
        let cfg = toy_config(PoolingStrategy::Sgan, false);
        let model = Model::init(cfg, 9).unwrap();
        let sample = toy_sample(0, 4, 4);
        assert!(model.predict(&sample, PredictMode::Full).is_err());
    }

    #[test]
    fn future_len_matches_config() {
        let cfg = ModelConfig::for_strategy(PoolingStrategy::Slstm, true);
        assert_eq!(cfg.future_len, 25);
        let toy = toy_config(PoolingStrategy::Slstm, true);
        let model = Model::init(toy, 10).unwrap();
        let sample = toy_sample(0, 5, 4);
        let out = model.predict(&sample, PredictMode::Map).unwrap();
        assert_eq!(out.modes[0].seq.len(), model.cfg.future_len);
    }

    #[test]
    fn default_widths_and_constants() {
        let cfg = ModelConfig::for_strategy(PoolingStrategy::PolarVr, true);
        assert_eq!(cfg.embed_width, 32);
        assert_eq!(cfg.enc_hidden, 64);
        assert_eq!(cfg.dec_hidden, 128);
        assert_eq!(cfg.mlp_width, 256);
        assert_eq!(cfg.history_len, 16);
        assert_eq!(cfg.future_len, 25);
        assert_eq!(cfg.output, OutputKind::Trivariate);
        assert_eq!((LOC_CLASSES, ACC_CLASSES), (3, 3));
        assert_eq!((cfg.grid.rows, cfg.grid.cols), (13, 3));
        for s in [PoolingStrategy::Slstm, PoolingStrategy::Csp, PoolingStrategy::Sgan] {
            assert_eq!(
                ModelConfig::for_strategy(s, true).output,
                OutputKind::Bivariate
            );
        }
    }

    #[test]
    fn recognize_argmax_invariant_to_logit_shift() {
        // Shifting one head's logits by a constant shifts the bias; the
        // argmax class must not move.
        let cfg = toy_config(PoolingStrategy::Sgan, true);
        let mut model = Model::init(cfg, 12).unwrap();
        let sample = toy_sample(1, 5, 4);
        let before = model
            .predict(&sample, PredictMode::Map)
            .unwrap()
            .posterior
            .unwrap()
            .argmax();
        for b in model.params.get_mut("mnv.loc.b").unwrap().values.iter_mut() {
            *b += 7.5;
        }
        let after = model
            .predict(&sample, PredictMode::Map)
            .unwrap()
            .posterior
            .unwrap()
            .argmax();
        assert_eq!(before, after);
    }
}
