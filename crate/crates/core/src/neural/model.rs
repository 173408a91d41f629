//! Encoder, decoder and direct-map networks built from nonlocal GCN layers.
//!
//! Every network is a stack: a pointwise input projection, a run of
//! nonlocal layers, and either a linear output projection (decoder,
//! direct map) or a final linear GCN layer that is then mean-pooled over
//! nodes (encoder). Parameters live in a flat [`Params`] map keyed by
//! `"{stack}.{part}.{w|b}"`, for example `enc.gcn2.w` or `dec.out.b`.
//!
//! Each stack can be evaluated on an autodiff tape (training) or with plain
//! dense kernels on a batch of `K` inputs that share one mesh (inference).

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gcn::{nonlocal_layer, Activation, MeshContext};
use crate::autodiff::{Graph, Params, Var};
use crate::error::{Error, Result};
use crate::forward::Normalization;
use crate::geometry::{default_channel_names, Field, Mesh};
use crate::rng::normal_vec;
use crate::sparse::CsrMatrix;
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Autoencoder,
    DirectMap,
}

/// Layer sizes of a model. `latent_dim` is ignored by direct maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: ModelKind,
    pub coord_dim: usize,
    pub field_channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn autoencoder(coord_dim: usize, field_channels: usize, hidden: usize, layers: usize, latent_dim: usize) -> Self {
        Self {
            kind: ModelKind::Autoencoder,
            coord_dim,
            field_channels,
            hidden,
            layers,
            latent_dim,
            activation: Activation::Tanh,
        }
    }

    pub fn direct_map(coord_dim: usize, field_channels: usize, hidden: usize, layers: usize) -> Self {
        Self {
            kind: ModelKind::DirectMap,
            coord_dim,
            field_channels,
            hidden,
            layers,
            latent_dim: 0,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let latent_ok = self.kind == ModelKind::DirectMap || self.latent_dim > 0;
        if self.coord_dim == 0 || self.field_channels == 0 || self.hidden == 0 || self.layers == 0 || !latent_ok {
            return Err(Error::invalid(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn encoder(&self) -> Stack {
        Stack {
            prefix: "enc",
            input: self.coord_dim + self.field_channels,
            hidden: self.hidden,
            layers: self.layers,
            output: self.latent_dim,
            gcn_head: true,
            act: self.activation,
        }
    }

    pub(crate) fn decoder(&self) -> Stack {
        Stack {
            prefix: "dec",
            input: self.coord_dim + self.latent_dim,
            hidden: self.hidden,
            layers: self.layers,
            output: self.field_channels,
            gcn_head: false,
            act: self.activation,
        }
    }

    pub(crate) fn direct(&self) -> Stack {
        Stack {
            prefix: "dm",
            input: self.coord_dim + 2,
            hidden: self.hidden,
            layers: self.layers,
            output: self.field_channels,
            gcn_head: false,
            act: self.activation,
        }
    }

    fn stacks(&self) -> Vec<Stack> {
        match self.kind {
            ModelKind::Autoencoder => vec![self.encoder(), self.decoder()],
            ModelKind::DirectMap => vec![self.direct()],
        }
    }

    /// Expected name and shape of every parameter tensor.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        for s in self.stacks() {
            s.shapes(&mut out);
        }
        out
    }

    /// Xavier-normal weights and zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Params> {
        self.validate()?;
        let mut params = Params::new();
        for (name, shape) in self.param_shapes() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let std = (2.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = normal_vec(rng, shape[0] * shape[1]).into_iter().map(|x| x * std).collect();
                Tensor::new(shape, data)?
            };
            params.insert(name, t);
        }
        Ok(params)
    }

    pub fn zero_params(&self) -> Params {
        self.param_shapes().into_iter().map(|(k, s)| (k, Tensor::zeros(&s))).collect()
    }

    /// Checks that `params` holds exactly the expected tensors.
    pub fn check_params(&self, params: &Params) -> Result<()> {
        let expected = self.param_shapes();
        for (name, shape) in &expected {
            match params.get(name) {
                None => return Err(Error::Consistency(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Consistency(format!(
                        "parameter {name} has shape {:?}, architecture expects {shape:?}",
                        t.shape()
                    )))
                }
                Some(t) if !t.is_finite() => return Err(Error::NonFinite(format!("parameter {name}"))),
                _ => {}
            }
        }
        if let Some(extra) = params.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Consistency(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }
}

pub(crate) struct Stack {
    prefix: &'static str,
    input: usize,
    hidden: usize,
    layers: usize,
    output: usize,
    gcn_head: bool,
    act: Activation,
}

impl Stack {
    fn name(&self, part: &str, wb: &str) -> String {
        format!("{}.{part}.{wb}", self.prefix)
    }

    fn layer_io(&self, k: usize) -> (usize, usize, Activation) {
        if self.gcn_head && k + 1 == self.layers {
            (self.hidden, self.output, Activation::Identity)
        } else {
            (self.hidden, self.hidden, self.act)
        }
    }

    /// Hidden-to-hidden layers add their input back. Without the skip path
    /// every layer averages over neighbourhoods and deep stacks lose
    /// node-level detail.
    fn residual(&self, k: usize) -> bool {
        !(self.gcn_head && k + 1 == self.layers)
    }

    fn shapes(&self, out: &mut BTreeMap<String, Vec<usize>>) {
        out.insert(self.name("in", "w"), vec![self.input, self.hidden]);
        out.insert(self.name("in", "b"), vec![1, self.hidden]);
        for k in 0..self.layers {
            let (ci, co, _) = self.layer_io(k);
            out.insert(self.name(&format!("gcn{k}"), "w"), vec![2 * ci, co]);
            out.insert(self.name(&format!("gcn{k}"), "b"), vec![1, co]);
        }
        if !self.gcn_head {
            out.insert(self.name("out", "w"), vec![self.hidden, self.output]);
            out.insert(self.name("out", "b"), vec![1, self.output]);
        }
    }

    fn var(&self, vars: &BTreeMap<String, Var>, part: &str, wb: &str) -> Result<Var> {
        let name = self.name(part, wb);
        vars.get(&name)
            .copied()
            .ok_or_else(|| Error::Consistency(format!("missing parameter {name}")))
    }

    fn tensor<'p>(&self, params: &'p Params, part: &str, wb: &str) -> Result<&'p Tensor> {
        let name = self.name(part, wb);
        params.get(&name).ok_or_else(|| Error::Consistency(format!("missing parameter {name}")))
    }

    /// `N x input` node features to `N x output` on the tape.
    pub(crate) fn tape(&self, g: &mut Graph, vars: &BTreeMap<String, Var>, ctx: &MeshContext, x: Var) -> Result<Var> {
        let n = ctx.n_nodes();
        let w = self.var(vars, "in", "w")?;
        let b = self.var(vars, "in", "b")?;
        let h = g.matmul(x, w)?;
        let b = g.broadcast_row(b, n)?;
        let h = g.add(h, b)?;
        let mut h = self.act.apply(g, h);
        for k in 0..self.layers {
            let part = format!("gcn{k}");
            let (_, _, act) = self.layer_io(k);
            let w = self.var(vars, &part, "w")?;
            let b = self.var(vars, &part, "b")?;
            let y = nonlocal_layer(g, &ctx.adjacency, h, w, b, act)?;
            h = if self.residual(k) { g.add(h, y)? } else { y };
        }
        if !self.gcn_head {
            let w = self.var(vars, "out", "w")?;
            let b = self.var(vars, "out", "b")?;
            let o = g.matmul(h, w)?;
            let b = g.broadcast_row(b, n)?;
            h = g.add(o, b)?;
        }
        Ok(h)
    }

    /// Plain evaluation of `k` stacked inputs (`k N x input`) on one mesh.
    pub(crate) fn plain(&self, params: &Params, adjacency: &CsrMatrix, x: &Tensor, k: usize) -> Result<Tensor> {
        let rows = x.rows();
        let n = adjacency.n_rows();
        if rows != k * n || x.cols() != self.input {
            return Err(Error::shape(
                "network",
                format!("input {:?} for {k} copies of {n} nodes with {} channels", x.shape(), self.input),
            ));
        }
        let mut h = dense(x, self.tensor(params, "in", "w")?, self.tensor(params, "in", "b")?, self.act)?;
        for l in 0..self.layers {
            let part = format!("gcn{l}");
            let (ci, co, act) = self.layer_io(l);
            let w = self.tensor(params, &part, "w")?;
            let b = self.tensor(params, &part, "b")?;
            if w.shape() != [2 * ci, co] {
                return Err(Error::shape("network", format!("{part} weight {:?}", w.shape())));
            }
            let (top, bottom) = w.data().split_at(ci * co);
            let top = Tensor::matrix(ci, co, top.to_vec())?;
            let bottom = Tensor::matrix(ci, co, bottom.to_vec())?;
            let mut mixed = vec![0.0; rows * co];
            gemm(&h, false, &top, false, &mut mixed, false);
            let mut means = vec![0.0; k * ci];
            for (i, row) in h.data().chunks_exact(ci).enumerate() {
                let m = &mut means[(i / n) * ci..(i / n + 1) * ci];
                for (a, v) in m.iter_mut().zip(row) {
                    *a += v;
                }
            }
            means.iter_mut().for_each(|v| *v /= n as f64);
            let means = Tensor::matrix(k, ci, means)?;
            let mut global = vec![0.0; k * co];
            gemm(&means, false, &bottom, false, &mut global, false);
            for (i, row) in mixed.chunks_exact_mut(co).enumerate() {
                let gl = &global[(i / n) * co..(i / n + 1) * co];
                for (a, v) in row.iter_mut().zip(gl) {
                    *a += v;
                }
            }
            let mut out = vec![0.0; rows * co];
            for blk in 0..k {
                let src = &mixed[blk * n * co..(blk + 1) * n * co];
                let dst = &mut out[blk * n * co..(blk + 1) * n * co];
                for i in 0..n {
                    let d = &mut dst[i * co..(i + 1) * co];
                    for (j, a) in adjacency.row(i) {
                        for (o, s) in d.iter_mut().zip(&src[j * co..(j + 1) * co]) {
                            *o += a * s;
                        }
                    }
                }
            }
            let bias = b.data();
            for row in out.chunks_exact_mut(co) {
                for (o, bb) in row.iter_mut().zip(bias) {
                    *o = activate(act, *o + bb);
                }
            }
            if self.residual(l) {
                out.iter_mut().zip(h.data()).for_each(|(o, x)| *o += x);
            }
            h = Tensor::matrix(rows, co, out)?;
        }
        if !self.gcn_head {
            h = dense(&h, self.tensor(params, "out", "w")?, self.tensor(params, "out", "b")?, Activation::Identity)?;
        }
        Ok(h)
    }
}

fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
        Activation::Identity => x,
    }
}

fn dense(x: &Tensor, w: &Tensor, b: &Tensor, act: Activation) -> Result<Tensor> {
    if x.cols() != w.rows() || b.shape() != [1, w.cols()] {
        return Err(Error::shape("dense", format!("{:?} x {:?} + {:?}", x.shape(), w.shape(), b.shape())));
    }
    let co = w.cols();
    let mut out = vec![0.0; x.rows() * co];
    gemm(x, false, w, false, &mut out, false);
    for row in out.chunks_exact_mut(co) {
        for (o, bb) in row.iter_mut().zip(b.data()) {
            *o = activate(act, *o + bb);
        }
    }
    Tensor::matrix(x.rows(), co, out)
}

/// Mean over the rows of each of the `k` blocks of `n` rows.
fn block_means(t: &Tensor, k: usize) -> Vec<Vec<f64>> {
    let n = t.rows() / k;
    let c = t.cols();
    (0..k)
        .map(|blk| {
            let mut m = vec![0.0; c];
            for i in 0..n {
                for (a, v) in m.iter_mut().zip(t.row_slice(blk * n + i)) {
                    *a += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= n as f64);
            m
        })
        .collect()
}

/// Tape version of the encoder: normalised field (`N x d_u`) to `1 x d_z`.
pub fn encoder_tape(
    arch: &Architecture,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    ctx: &MeshContext,
    u_normalized: Var,
) -> Result<Var> {
    let coords = g.constant(ctx.coords.clone());
    let x = g.concat(&[coords, u_normalized], 1)?;
    let h = arch.encoder().tape(g, vars, ctx, x)?;
    g.reduce_mean(h, 0)
}

/// Tape version of the decoder: `1 x d_z` to the normalised field `N x d_u`.
pub fn decoder_tape(arch: &Architecture, g: &mut Graph, vars: &BTreeMap<String, Var>, ctx: &MeshContext, z: Var) -> Result<Var> {
    let coords = g.constant(ctx.coords.clone());
    let zb = g.broadcast_row(z, ctx.n_nodes())?;
    let x = g.concat(&[coords, zb], 1)?;
    arch.decoder().tape(g, vars, ctx, x)
}

fn non_finite(what: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// A trained (or freshly initialised) geometry-conditioned autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub arch: Architecture,
    pub params: Params,
    pub normalization: Normalization,
}

impl Autoencoder {
    pub fn new(arch: Architecture, params: Params, normalization: Normalization) -> Result<Self> {
        if arch.kind != ModelKind::Autoencoder {
            return Err(Error::Consistency("expected an autoencoder architecture".into()));
        }
        arch.validate()?;
        arch.check_params(&params)?;
        if normalization.channels() != arch.field_channels {
            return Err(Error::Consistency(format!(
                "normalisation has {} channels, architecture {}",
                normalization.channels(),
                arch.field_channels
            )));
        }
        Ok(Self {
            arch,
            params,
            normalization,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Latent code of a field given in physical units. The stored dataset
    /// statistics are applied before the network sees it.
    pub fn encode(&self, mesh: &Mesh, field: &Field) -> Result<Vec<f64>> {
        let ctx = MeshContext::new(mesh);
        self.encode_in(&ctx, field)
    }

    pub fn encode_in(&self, ctx: &MeshContext, field: &Field) -> Result<Vec<f64>> {
        if field.n_nodes() != ctx.n_nodes() || field.n_channels() != self.arch.field_channels {
            return Err(Error::shape(
                "encode",
                format!("field {}x{} on {} nodes", field.n_nodes(), field.n_channels(), ctx.n_nodes()),
            ));
        }
        let u = self.normalization.normalize(field).to_tensor();
        let mut data = Vec::with_capacity(ctx.n_nodes() * (ctx.coords.cols() + u.cols()));
        for i in 0..ctx.n_nodes() {
            data.extend_from_slice(ctx.coords.row_slice(i));
            data.extend_from_slice(u.row_slice(i));
        }
        let x = Tensor::matrix(ctx.n_nodes(), ctx.coords.cols() + u.cols(), data)?;
        let h = self.arch.encoder().plain(&self.params, &ctx.adjacency, &x, 1)?;
        non_finite("encoder output", &h)?;
        Ok(block_means(&h, 1).pop().unwrap())
    }

    /// Encodes many (mesh, field) pairs in parallel; order is preserved.
    pub fn encode_batch(&self, items: &[(&Mesh, &Field)]) -> Result<Vec<Vec<f64>>> {
        items.par_iter().map(|(m, f)| self.encode(m, f)).collect()
    }

    /// Decoded field in physical units.
    pub fn decode(&self, mesh: &Mesh, z: &[f64]) -> Result<Field> {
        let ctx = MeshContext::new(mesh);
        Ok(self.decode_many(&ctx, &[z])?.pop().unwrap())
    }

    /// Decodes several latent vectors on one mesh with a single stacked pass.
    pub fn decode_many(&self, ctx: &MeshContext, zs: &[&[f64]]) -> Result<Vec<Field>> {
        let out = self.decode_normalized(ctx, zs)?;
        let (n, c) = (ctx.n_nodes(), self.arch.field_channels);
        out.data()
            .chunks_exact(n * c)
            .map(|blk| {
                let f = Field::new(n, default_channel_names(c), blk.to_vec())?;
                Ok(self.normalization.denormalize(&f))
            })
            .collect()
    }

    fn decode_normalized(&self, ctx: &MeshContext, zs: &[&[f64]]) -> Result<Tensor> {
        let (n, d, dz) = (ctx.n_nodes(), ctx.coords.cols(), self.arch.latent_dim);
        if zs.is_empty() {
            return Err(Error::invalid("no latent vectors to decode"));
        }
        let mut data = Vec::with_capacity(zs.len() * n * (d + dz));
        for z in zs {
            if z.len() != dz {
                return Err(Error::shape("decode", format!("latent of length {}, expected {dz}", z.len())));
            }
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("latent vector".into()));
            }
            for i in 0..n {
                data.extend_from_slice(ctx.coords.row_slice(i));
                data.extend_from_slice(z);
            }
        }
        let x = Tensor::matrix(zs.len() * n, d + dz, data)?;
        let out = self.arch.decoder().plain(&self.params, &ctx.adjacency, &x, zs.len())?;
        non_finite("decoder output", &out)?;
        Ok(out)
    }
}
