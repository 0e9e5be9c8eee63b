use std::collections::HashMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DitConfig, ModelError};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Conditioning streams that can be replaced by a learned null token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Trajectories,
    Context,
    Reference,
}

impl FromStr for Stream {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "trajectories" => Ok(Stream::Trajectories),
            "context" | "first_frame" => Ok(Stream::Context),
            "b_ref" | "reference" => Ok(Stream::Reference),
            other => Err(ModelError::UnknownStream(other.to_string())),
        }
    }
}

/// Raw conditioning features for one sample. `None` means the stream is
/// dropped and its token slots carry the stream's null embedding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Conditioning {
    /// Frame-aligned reference boxes, `frames×4` row-major.
    pub reference: Option<Vec<f64>>,
    /// DCT trajectory tokens, `grid²×2K` row-major.
    pub trajectories: Option<Vec<f64>>,
    /// Context grid, `context_size²` row-major.
    pub context: Option<Vec<f64>>,
}

/// Returns `cond` with `stream` replaced by its null token.
pub fn drop_condition(stream: Stream, cond: &Conditioning) -> Conditioning {
    let mut out = cond.clone();
    match stream {
        Stream::Trajectories => out.trajectories = None,
        Stream::Context => out.context = None,
        Stream::Reference => out.reference = None,
    }
    out
}

/// The velocity network `v(x_t, t | conditions)`.
///
/// Token layout: `frames` box tokens (noised target plus the frame-aligned
/// reference embedding), then `grid²` trajectory tokens, then context-patch
/// tokens. Each block is pre-norm attention + MLP with adaptive layer-norm
/// shift/scale/gate from the timestep embedding; the output head reads the
/// box tokens only.
#[derive(Debug, Clone, PartialEq)]
pub struct Dit<F> {
    config: DitConfig,
    names: Vec<String>,
    params: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

enum Init {
    Zeros,
    Normal(f64),
    /// N(0, 1/fan_in) on the first axis.
    FanIn,
}

fn layout(c: &DitConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.model_dim;
    let mut v: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let linear = |v: &mut Vec<_>, name: &str, i: usize, o: usize, zero: bool| {
        v.push((
            format!("{name}.w"),
            vec![i, o],
            if zero { Init::Zeros } else { Init::FanIn },
        ));
        v.push((format!("{name}.b"), vec![o], Init::Zeros));
    };
    linear(&mut v, "frame_in", 4, d, false);
    linear(&mut v, "ref_in", 4, d, false);
    linear(&mut v, "traj_in", c.trajectory_features(), d, false);
    linear(&mut v, "ctx_in", c.context_features(), d, false);
    v.push(("pos.frame".into(), vec![c.frames, d], Init::Normal(0.02)));
    v.push(("pos.traj".into(), vec![c.trajectory_tokens(), d], Init::Normal(0.02)));
    v.push(("pos.ctx".into(), vec![c.context_tokens(), d], Init::Normal(0.02)));
    v.push(("null.traj".into(), vec![1, d], Init::Normal(0.02)));
    v.push(("null.ctx".into(), vec![1, d], Init::Normal(0.02)));
    v.push(("null.ref".into(), vec![1, d], Init::Normal(0.02)));
    linear(&mut v, "time.fc1", d, d, false);
    linear(&mut v, "time.fc2", d, d, false);
    for l in 0..c.layers {
        linear(&mut v, &format!("blocks.{l}.ada"), d, 6 * d, true);
        linear(&mut v, &format!("blocks.{l}.qkv"), d, 3 * d, false);
        linear(&mut v, &format!("blocks.{l}.proj"), d, d, false);
        linear(&mut v, &format!("blocks.{l}.fc1"), d, c.mlp_ratio * d, false);
        linear(&mut v, &format!("blocks.{l}.fc2"), c.mlp_ratio * d, d, false);
    }
    linear(&mut v, "final.ada", d, 2 * d, true);
    linear(&mut v, "head", d, 4, true);
    v
}

/// Sinusoidal features of `t·1000`, width `dim` (cos half, then sin half).
fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t * 1000.0 * freq;
        out[i] = arg.cos();
        out[half + i] = arg.sin();
    }
    out
}

struct Bound<'a, F> {
    model: &'a Dit<F>,
    vars: Vec<Var>,
}

impl<F: Scalar> Bound<'_, F> {
    fn p(&self, name: &str) -> Var {
        self.vars[self.model.index[name]]
    }

    fn linear(&self, g: &mut Graph<F>, x: Var, name: &str) -> Result<Var, ModelError> {
        let y = g.matmul(x, self.p(&format!("{name}.w")))?;
        Ok(g.add(y, self.p(&format!("{name}.b")))?)
    }
}

impl<F: Scalar> Dit<F> {
    /// Freshly initialized model (zero-initialized modulation and head).
    pub fn new(config: DitConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("std > 0");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
                Init::FanIn => {
                    let dist = Normal::new(0.0, 1.0 / (shape[0] as f64).sqrt()).expect("std > 0");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            names.push(name);
            params.push(Tensor::from_f64(&shape, &values)?);
        }
        Self::from_parts(config, names, params)
    }

    /// Assembles a model from named tensors; every architecture parameter must
    /// be present exactly once with the expected shape.
    pub fn from_parts(config: DitConfig, names: Vec<String>, params: Vec<Tensor<F>>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if names.len() != expected.len() || params.len() != names.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "expected {} parameters, got {}",
                expected.len(),
                names.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(ModelError::ConfigMismatch(format!("duplicate parameter `{n}`")));
            }
        }
        for (name, shape, _) in &expected {
            let i = *index
                .get(name)
                .ok_or_else(|| ModelError::ConfigMismatch(format!("missing parameter `{name}`")))?;
            if params[i].shape() != shape.as_slice() {
                return Err(ModelError::ConfigMismatch(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    params[i].shape()
                )));
            }
        }
        Ok(Self {
            config,
            names,
            params,
            index,
        })
    }

    pub fn config(&self) -> &DitConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> Dit<G> {
        Dit {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            index: self.index.clone(),
        }
    }

    fn bind(&self, g: &mut Graph<F>, requires_grad: bool) -> Bound<'_, F> {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.clone(), requires_grad))
            .collect();
        Bound { model: self, vars }
    }

    fn check_inputs(&self, x_t: &[f64], t: &[f64], conds: &[Conditioning]) -> Result<usize, ModelError> {
        let c = &self.config;
        let batch = conds.len();
        let mismatch = |m: String| Err(ModelError::Tensor(crate::tensor::TensorError::ShapeMismatch { op: "dit", detail: m }));
        if batch == 0 || t.len() != batch || x_t.len() != batch * c.frames * 4 {
            return mismatch(format!(
                "batch {batch}: x_t has {} values (want {}), t has {}",
                x_t.len(),
                batch * c.frames * 4,
                t.len()
            ));
        }
        if let Some(bad) = t.iter().find(|v| !v.is_finite()) {
            return mismatch(format!("non-finite timestep {bad}"));
        }
        for cond in conds {
            if cond.reference.as_ref().is_some_and(|r| r.len() != c.frames * 4) {
                return mismatch("reference boxes must be frames×4".into());
            }
            if cond
                .trajectories
                .as_ref()
                .is_some_and(|r| r.len() != c.trajectory_tokens() * c.trajectory_features())
            {
                return mismatch(format!(
                    "trajectory tokens must be {}×{}",
                    c.trajectory_tokens(),
                    c.trajectory_features()
                ));
            }
            if cond
                .context
                .as_ref()
                .is_some_and(|r| r.len() != c.context_size * c.context_size)
            {
                return mismatch(format!("context must be {0}×{0}", c.context_size));
            }
        }
        Ok(batch)
    }

    /// Embeds one stream across the batch, substituting the null token for
    /// dropped samples. Output `[B, tokens, d]`, before positional embeddings.
    fn embed_stream(
        &self,
        g: &mut Graph<F>,
        b: &Bound<'_, F>,
        stream: Stream,
        conds: &[Conditioning],
    ) -> Result<Var, ModelError> {
        let c = &self.config;
        let d = c.model_dim;
        let batch = conds.len();
        let (tokens, feats, proj, null) = match stream {
            Stream::Reference => (c.frames, 4, "ref_in", "null.ref"),
            Stream::Trajectories => (c.trajectory_tokens(), c.trajectory_features(), "traj_in", "null.traj"),
            Stream::Context => (c.context_tokens(), c.context_features(), "ctx_in", "null.ctx"),
        };
        let mut raw = Vec::with_capacity(batch * tokens * feats);
        let mut mask = Vec::with_capacity(batch * tokens * d);
        for cond in conds {
            let present = match stream {
                Stream::Reference => cond.reference.as_deref(),
                Stream::Trajectories => cond.trajectories.as_deref(),
                Stream::Context => cond.context.as_deref(),
            };
            match present {
                Some(values) if stream == Stream::Context => raw.extend(self.patchify(values)),
                Some(values) => raw.extend_from_slice(values),
                None => raw.extend(std::iter::repeat_n(0.0, tokens * feats)),
            }
            let m = if present.is_some() { 1.0 } else { 0.0 };
            mask.extend(std::iter::repeat_n(m, tokens * d));
        }
        let x = g.constant(Tensor::from_f64(&[batch, tokens, feats], &raw)?);
        let emb = b.linear(g, x, proj)?;
        if mask.iter().all(|&m| m == 1.0) {
            return Ok(emb);
        }
        let inv: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
        let mask = g.constant(Tensor::from_f64(&[batch, tokens, d], &mask)?);
        let inv = g.constant(Tensor::from_f64(&[batch, tokens, d], &inv)?);
        let nulls = g.gather_rows(b.p(null), &vec![0; batch * tokens])?;
        let nulls = g.reshape(nulls, &[batch, tokens, d])?;
        let kept = g.mul(emb, mask)?;
        let filled = g.mul(nulls, inv)?;
        Ok(g.add(kept, filled)?)
    }

    fn patchify(&self, grid: &[f64]) -> Vec<f64> {
        let c = &self.config;
        let (s, p) = (c.context_size, c.context_patch);
        let per_side = s / p;
        let mut out = Vec::with_capacity(grid.len());
        for pi in 0..per_side {
            for pj in 0..per_side {
                for a in 0..p {
                    for bb in 0..p {
                        out.push(grid[(pi * p + a) * s + pj * p + bb]);
                    }
                }
            }
        }
        out
    }

    /// Token embedding of one conditioning stream (before positional
    /// embeddings), for inspection.
    pub fn stream_embedding(&self, stream: Stream, conds: &[Conditioning]) -> Result<Tensor<F>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let v = self.embed_stream(&mut g, &b, stream, conds)?;
        Ok(g.value(v).clone())
    }

    fn forward_graph(
        &self,
        g: &mut Graph<F>,
        b: &Bound<'_, F>,
        x_t: &[f64],
        t: &[f64],
        conds: &[Conditioning],
    ) -> Result<Var, ModelError> {
        let batch = self.check_inputs(x_t, t, conds)?;
        let c = &self.config;
        let d = c.model_dim;
        let frames = c.frames;
        let n = c.sequence_len();
        let heads = c.heads;
        let dh = d / heads;

        let x = g.constant(Tensor::from_f64(&[batch, frames, 4], x_t)?);
        let frame_tok = b.linear(g, x, "frame_in")?;
        let ref_tok = self.embed_stream(g, b, Stream::Reference, conds)?;
        let frame_tok = g.add(frame_tok, ref_tok)?;
        let frame_tok = g.add(frame_tok, b.p("pos.frame"))?;
        let traj_tok = self.embed_stream(g, b, Stream::Trajectories, conds)?;
        let traj_tok = g.add(traj_tok, b.p("pos.traj"))?;
        let ctx_tok = self.embed_stream(g, b, Stream::Context, conds)?;
        let ctx_tok = g.add(ctx_tok, b.p("pos.ctx"))?;
        let mut h = g.concat(&[frame_tok, traj_tok, ctx_tok], 1)?;

        let tf: Vec<f64> = t.iter().flat_map(|&ti| timestep_features(ti, d)).collect();
        let tf = g.constant(Tensor::from_f64(&[batch, d], &tf)?);
        let temb = b.linear(g, tf, "time.fc1")?;
        let temb = g.silu(temb)?;
        let temb = b.linear(g, temb, "time.fc2")?;
        let cond_act = g.silu(temb)?;

        let modulate = |g: &mut Graph<F>, x: Var, shift: Var, scale: Var| -> Result<Var, ModelError> {
            let xs = g.mul(x, scale)?;
            let y = g.add(x, xs)?;
            Ok(g.add(y, shift)?)
        };

        for l in 0..c.layers {
            let ada = b.linear(g, cond_act, &format!("blocks.{l}.ada"))?;
            let mut chunk = Vec::with_capacity(6);
            for i in 0..6 {
                let s = g.slice(ada, 1, i * d, d)?;
                chunk.push(g.repeat_rows(s, n)?);
            }
            let (shift1, scale1, gate1, shift2, scale2, gate2) =
                (chunk[0], chunk[1], chunk[2], chunk[3], chunk[4], chunk[5]);

            let hn = g.layer_norm(h, None, None)?;
            let hm = modulate(g, hn, shift1, scale1)?;
            let qkv = b.linear(g, hm, &format!("blocks.{l}.qkv"))?;
            let split = |g: &mut Graph<F>, i: usize| -> Result<Var, ModelError> {
                let s = g.slice(qkv, 2, i * d, d)?;
                let s = g.reshape(s, &[batch, n, heads, dh])?;
                let s = g.permute(s, &[0, 2, 1, 3])?;
                Ok(g.reshape(s, &[batch * heads, n, dh])?)
            };
            let q = split(g, 0)?;
            let k = split(g, 1)?;
            let v = split(g, 2)?;
            let scores = g.matmul_nt(q, k)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let attn = g.softmax(scores)?;
            let o = g.matmul(attn, v)?;
            let o = g.reshape(o, &[batch, heads, n, dh])?;
            let o = g.permute(o, &[0, 2, 1, 3])?;
            let o = g.reshape(o, &[batch, n, d])?;
            let o = b.linear(g, o, &format!("blocks.{l}.proj"))?;
            let o = g.mul(o, gate1)?;
            h = g.add(h, o)?;

            let hn = g.layer_norm(h, None, None)?;
            let hm = modulate(g, hn, shift2, scale2)?;
            let m = b.linear(g, hm, &format!("blocks.{l}.fc1"))?;
            let m = g.gelu(m)?;
            let m = b.linear(g, m, &format!("blocks.{l}.fc2"))?;
            let m = g.mul(m, gate2)?;
            h = g.add(h, m)?;
        }

        let ada = b.linear(g, cond_act, "final.ada")?;
        let shift = g.slice(ada, 1, 0, d)?;
        let shift = g.repeat_rows(shift, frames)?;
        let scale = g.slice(ada, 1, d, d)?;
        let scale = g.repeat_rows(scale, frames)?;
        let hf = g.slice(h, 1, 0, frames)?;
        let hf = g.layer_norm(hf, None, None)?;
        let hf = modulate(g, hf, shift, scale)?;
        b.linear(g, hf, "head")
    }

    /// Velocity prediction, `B×frames×4` flattened.
    pub fn predict(&self, x_t: &[f64], t: &[f64], conds: &[Conditioning]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let out = self.forward_graph(&mut g, &b, x_t, t, conds)?;
        Ok(g.value(out).to_f64_vec())
    }

    /// Flow-matching loss `mean ‖(x1 − x0) − v(x_t, t)‖²` for explicit noise
    /// draws and timesteps, with gradients for every parameter (in
    /// [`Self::params`] order).
    pub fn loss_and_grads(
        &self,
        x1: &[f64],
        x0: &[f64],
        t: &[f64],
        conds: &[Conditioning],
    ) -> Result<(f64, Vec<Tensor<F>>), ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, true);
        let (loss, _) = self.loss_graph(&mut g, &b, x1, x0, t, conds)?;
        let grads = g.backward(loss)?;
        let value = g.value(loss).data()[0].as_f64();
        Ok((value, b.vars.iter().map(|&v| grads.get(v)).collect()))
    }

    /// Loss value only (no gradient bookkeeping).
    pub fn loss_value(&self, x1: &[f64], x0: &[f64], t: &[f64], conds: &[Conditioning]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (loss, _) = self.loss_graph(&mut g, &b, x1, x0, t, conds)?;
        Ok(g.value(loss).data()[0].as_f64())
    }

    fn loss_graph(
        &self,
        g: &mut Graph<F>,
        b: &Bound<'_, F>,
        x1: &[f64],
        x0: &[f64],
        t: &[f64],
        conds: &[Conditioning],
    ) -> Result<(Var, Var), ModelError> {
        if x1.len() != x0.len() || t.len() != conds.len() {
            return Err(ModelError::Tensor(crate::tensor::TensorError::ShapeMismatch {
                op: "flow_loss",
                detail: format!("x1 {} vs x0 {}", x1.len(), x0.len()),
            }));
        }
        let per = x1.len() / conds.len().max(1);
        let mut x_t = Vec::with_capacity(x1.len());
        let mut target = Vec::with_capacity(x1.len());
        for (i, (a, z)) in x1.iter().zip(x0).enumerate() {
            let ti = t[i / per.max(1)];
            x_t.push((1.0 - ti) * z + ti * a);
            target.push(a - z);
        }
        let pred = self.forward_graph(g, b, &x_t, t, conds)?;
        let shape = g.shape(pred).to_vec();
        let target = g.constant(Tensor::from_f64(&shape, &target)?);
        let diff = g.sub(target, pred)?;
        let ss = g.sum_of_squares(diff)?;
        let loss = g.scale(ss, 1.0 / x1.len() as f64)?;
        Ok((loss, pred))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DitConfig {
        DitConfig {
            layers: 2,
            model_dim: 16,
            heads: 2,
            mlp_ratio: 2,
            frames: 4,
            grid: 2,
            dct_order: 3,
            context_size: 4,
            context_patch: 2,
            ..DitConfig::default()
        }
    }

    fn inputs(c: &DitConfig, batch: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<Conditioning>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let x = draw(batch * c.frames * 4);
        let t = draw(batch).iter().map(|v| v.abs().min(1.0)).collect();
        let conds = (0..batch)
            .map(|_| Conditioning {
                reference: Some(draw(c.frames * 4)),
                trajectories: Some(draw(c.trajectory_tokens() * c.trajectory_features())),
                context: Some(draw(c.context_size * c.context_size)),
            })
            .collect();
        (x, t, conds)
    }

    #[test]
    fn fresh_model_outputs_zero() {
        let c = tiny();
        let m = Dit::<f32>::new(c.clone(), 0).unwrap();
        let (x, t, conds) = inputs(&c, 3, 1);
        let out = m.predict(&x, &t, &conds).unwrap();
        assert_eq!(out.len(), 3 * c.frames * 4);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_for_long_clips() {
        for frames in [24, DitConfig::FULL_FRAMES] {
            let c = DitConfig {
                frames,
                dct_order: 20,
                ..tiny()
            };
            let m = Dit::<f32>::new(c.clone(), 0).unwrap();
            let (x, t, conds) = inputs(&c, 1, 2);
            assert_eq!(m.predict(&x, &t, &conds).unwrap().len(), frames * 4);
        }
    }

    #[test]
    fn deterministic_forward() {
        let c = tiny();
        let mut m = Dit::<f32>::new(c.clone(), 7).unwrap();
        // give the zero-initialized parts some weight so the output is non-trivial
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 0.1).unwrap();
        for p in m.params_mut() {
            for v in p.data_mut() {
                *v += normal.sample(&mut rng) as f32;
            }
        }
        let (x, t, conds) = inputs(&c, 2, 4);
        let a = m.predict(&x, &t, &conds).unwrap();
        let b = m.predict(&x, &t, &conds).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|&v| v != 0.0));
        let again = Dit::<f32>::new(c, 7).unwrap();
        assert_eq!(again.params()[0], Dit::<f32>::new(tiny(), 7).unwrap().params()[0]);
    }

    #[test]
    fn dropped_stream_uses_null_token() {
        let c = tiny();
        let m = Dit::<f64>::new(c.clone(), 1).unwrap();
        let (_, _, conds) = inputs(&c, 2, 5);
        let dropped: Vec<_> = conds.iter().map(|x| drop_condition(Stream::Trajectories, x)).collect();
        let emb = m.stream_embedding(Stream::Trajectories, &dropped).unwrap();
        let null = m.param("null.traj").unwrap().data();
        for row in emb.data().chunks(c.model_dim) {
            assert_eq!(row, null);
        }
        // dropping nothing leaves inputs unchanged
        assert_eq!(conds[0].clone(), conds[0]);
        let kept = m.stream_embedding(Stream::Trajectories, &conds).unwrap();
        assert!(kept.data().chunks(c.model_dim).any(|r| r != null));
    }

    #[test]
    fn unknown_stream() {
        assert!(matches!("pixels".parse::<Stream>(), Err(ModelError::UnknownStream(_))));
        assert_eq!("trajectories".parse::<Stream>().unwrap(), Stream::Trajectories);
    }

    #[test]
    fn shape_checks() {
        let c = tiny();
        let m = Dit::<f32>::new(c.clone(), 0).unwrap();
        let (x, t, mut conds) = inputs(&c, 1, 6);
        assert!(m.predict(&x[..4], &t, &conds).is_err());
        conds[0].context = Some(vec![0.0; 3]);
        assert!(m.predict(&x, &t, &conds).is_err());
        assert!(m.predict(&x, &[f64::NAN], &conds[..1]).is_err());
    }

    #[test]
    fn from_parts_rejects_missing_or_misshaped() {
        let m = Dit::<f32>::new(tiny(), 0).unwrap();
        let mut names = m.names().to_vec();
        let params = m.params().to_vec();
        names[0] = "bogus".into();
        assert!(Dit::from_parts(tiny(), names, params.clone()).is_err());
        let mut params2 = params;
        params2[1] = Tensor::zeros(&[3]);
        assert!(Dit::from_parts(tiny(), m.names().to_vec(), params2).is_err());
    }
}
