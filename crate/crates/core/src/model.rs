//! Full trailer generation model: framing, encoders, condition memory and
//! teacher-forced decoding with the three losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::condition::{augment_context, ConditionEncoder, ConditionSequence};
use crate::config::{ModelConfig, PositionalScheme};
use crate::decoder::TrailerDecoder;
use crate::encoder::{EncoderOutput, MovieEncoder, SpecialTokens};
use crate::error::{Error, Result};
use crate::losses::{kl_loss_graph, reconstruction_loss_graph, trailerness_loss_graph, LossBreakdown, LossWeights};
use crate::numerics::{normal_init, AttentionMask, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::shotcore::{positional_encoding, PositionalEncoding};
use crate::training::PaddedPair;

#[derive(Clone, Debug)]
pub enum Positions {
    Sinusoidal(PositionalEncoding),
    Learned(ParamId),
}

#[derive(Clone, Debug)]
pub struct TgtModel {
    pub config: ModelConfig,
    pub tokens: SpecialTokens,
    pub encoder: MovieEncoder,
    pub condition: Option<ConditionEncoder>,
    pub decoder: TrailerDecoder,
    pub positions: Positions,
}

/// Everything the encoder side produces for one movie.
pub struct Encoded {
    pub encoder: EncoderOutput,
    /// Context rows followed by condition rows.
    pub memory: Var,
}

pub struct PairForward {
    pub encoded: Encoded,
    /// `L_dec x d`; row `j` predicts trailer shot `j + 1`, row `m` the end token.
    pub predictions: Var,
    pub targets: Var,
}

pub struct PairLoss {
    pub total: Var,
    pub parts: LossBreakdown,
    pub forward: PairForward,
}

const CONDITION_STREAM: u64 = 0xC0_4D17_1011;

impl TgtModel {
    /// Builds the model and its parameters deterministically from `config.init_seed`.
    pub fn new<T: Real>(config: ModelConfig) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let tokens = SpecialTokens::new(&mut store, &mut rng, d, config.token_init_std)?;
        let encoder = MovieEncoder::new(&mut store, &mut rng, &config)?;
        let decoder = TrailerDecoder::new(&mut store, &mut rng, &config)?;
        let positions = match config.positional {
            PositionalScheme::Sinusoidal => Positions::Sinusoidal(positional_encoding(config.max_positions - 2, d)?),
            PositionalScheme::Learned => Positions::Learned(store.add(
                "positions.table",
                normal_init(&mut rng, &[config.max_positions, d], config.token_init_std),
            )?),
        };
        // Own stream, drawn last: adding a condition leaves every other weight untouched.
        let mut cond_rng = ChaCha8Rng::seed_from_u64(config.init_seed ^ CONDITION_STREAM);
        let condition = match &config.condition {
            Some(c) => Some(ConditionEncoder::new(&mut store, &mut cond_rng, &config, c.mode, c.dim)?),
            None => None,
        };
        Ok((TgtModel { config, tokens, encoder, condition, decoder, positions }, store))
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// `scale * rows + positions`, rows already concatenated in order.
    pub fn embed<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, parts: &[Var]) -> Result<Var> {
        let parts: Vec<Var> = parts.iter().copied().filter(|&p| g.value(p).rows() > 0).collect();
        let x = g.concat_rows(&parts)?;
        let x = g.scale(x, T::from_f64_lossy(self.config.scale()))?;
        let l = g.value(x).rows();
        if l > self.config.max_positions {
            return Err(Error::Contract(format!("sequence of {l} positions exceeds max_positions {}", self.config.max_positions)));
        }
        let pe = match &self.positions {
            Positions::Sinusoidal(table) => {
                let data = (0..l).flat_map(|p| table.row(p).iter().map(|&v| T::from_f64_lossy(v))).collect();
                g.constant(Tensor::matrix(l, self.d_model(), data)?)?
            }
            Positions::Learned(id) => {
                let t = g.param(store, *id)?;
                g.slice_rows(t, 0, l)?
            }
        };
        g.add(x, pe)
    }

    /// Frames `[SOS, u_1..u_n, EOS, padding]` and runs the encoders.
    /// `movie` holds `n` real rows followed by zero padding.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        movie: &Tensor<f32>,
        n: usize,
        condition: Option<&ConditionSequence>,
        enc_mask: Option<&AttentionMask>,
    ) -> Result<Encoded> {
        let d = self.d_model();
        if movie.cols() != d {
            return Err(Error::Contract(format!("shot width {} but model width {d}", movie.cols())));
        }
        if n == 0 || n > movie.rows() {
            return Err(Error::Contract(format!("{n} real shots in a {}-row movie", movie.rows())));
        }
        let sos = g.param(store, self.tokens.sos)?;
        let eos = g.param(store, self.tokens.eos)?;
        let rows = g.constant(movie.slice_rows(0, n).cast())?;
        let pad = g.constant(Tensor::zeros(&[movie.rows() - n, d]))?;
        let framed = self.embed(g, store, &[sos, rows, eos, pad])?;
        let encoder = self.encoder.forward(g, store, framed, enc_mask)?;
        let cond = match (&self.condition, condition) {
            (Some(ce), Some(c)) => Some(ce.forward(g, store, c, self.config.scale())?),
            (None, Some(c)) if !c.is_empty() => {
                return Err(Error::Contract("model was built without condition support".into()));
            }
            _ => None,
        };
        let memory = augment_context(g, encoder.context, cond)?;
        Ok(Encoded { encoder, memory })
    }

    /// Decoder pass over `[SOS, rows]` with the given masks; `rows` are raw
    /// (unscaled) embeddings.
    pub fn decode_teacher_forced<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        memory: Var,
        rows: Var,
        self_mask: &AttentionMask,
        cross_mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let sos = g.param(store, self.tokens.sos)?;
        let input = self.embed(g, store, &[sos, rows])?;
        self.decoder.forward(g, store, input, memory, self_mask, cross_mask)
    }

    pub fn forward_pair<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, pair: &PaddedPair) -> Result<PairForward> {
        if pair.m == 0 {
            return Err(Error::Contract(format!("{}: empty trailer", pair.id)));
        }
        let encoded = self.encode(g, store, &pair.movie, pair.n, pair.condition.as_ref(), Some(&pair.masks.encoder))?;
        let trailer = g.constant(pair.trailer.cast())?;
        let predictions = self.decode_teacher_forced(
            g,
            store,
            encoded.memory,
            trailer,
            &pair.masks.decoder_self,
            Some(&pair.masks.cross),
        )?;
        let d = self.d_model();
        let real = g.constant(pair.trailer.slice_rows(0, pair.m).cast())?;
        let mut eos = g.param(store, self.tokens.eos)?;
        if self.config.detach_eos_target {
            eos = g.detach(eos)?;
        }
        let pad = g.constant(Tensor::zeros(&[pair.trailer.rows() - pair.m, d]))?;
        let parts: Vec<Var> = [real, eos, pad].into_iter().filter(|&p| g.value(p).rows() > 0).collect();
        let targets = g.concat_rows(&parts)?;
        Ok(PairForward { encoded, predictions, targets })
    }

    /// Weighted loss for one pair. With `normalize`, the trailerness term is
    /// divided by `n + 2` and the two decoder terms by `m + 1`.
    pub fn pair_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        pair: &PaddedPair,
        weights: &LossWeights,
        normalize: bool,
    ) -> Result<PairLoss> {
        let forward = self.forward_pair(g, store, pair)?;
        let (enc_norm, dec_norm) = if normalize { ((pair.n + 2) as f64, (pair.m + 1) as f64) } else { (1.0, 1.0) };
        let l_rec = reconstruction_loss_graph(g, forward.predictions, forward.targets, &pair.masks.target_rows)?;
        let l_kl = kl_loss_graph(g, forward.predictions, forward.targets, &pair.masks.target_rows)?;
        let l_t = match forward.encoded.encoder.scores {
            Some(s) => Some(trailerness_loss_graph(g, s, &pair.gt_scores, &pair.masks.score_rows)?),
            None => None,
        };
        let wrec = g.scale(l_rec, T::from_f64_lossy(weights.reconstruction / dec_norm))?;
        let wkl = g.scale(l_kl, T::from_f64_lossy(weights.kl / dec_norm))?;
        let mut total = g.add(wrec, wkl)?;
        if let Some(lt) = l_t {
            let wt = g.scale(lt, T::from_f64_lossy(weights.trailerness / enc_norm))?;
            total = g.add(total, wt)?;
        }
        let scalar = |g: &Graph<T>, v: Var| g.value(v).data()[0].as_f64();
        let parts = LossBreakdown {
            l_t: l_t.map_or(0.0, |v| scalar(g, v) / enc_norm),
            l_rec: scalar(g, l_rec) / dec_norm,
            l_kl: scalar(g, l_kl) / dec_norm,
            total: scalar(g, total),
        };
        Ok(PairLoss { total, parts, forward })
    }
}
