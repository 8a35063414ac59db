//! Voxel encoder-decoder with prior-gated skip fusion, sparse extraction
//! and per-point dense refinement.

mod sparse;

pub use sparse::{sparse_from_grid, sparse_points, SparsePoints, SparseSelection, MIN_THRESHOLD};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gridding, point_feature_sampling, PointCloud, VoxelGrid};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

const KVOL: usize = 27;

/// Network shape and extraction settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub grid_resolution: usize,
    pub levels: usize,
    /// Encoder channels per level, shallow to deep.
    pub channels: Vec<usize>,
    pub n_sparse: usize,
    /// Dense points generated per sparse point.
    pub rho: usize,
    /// Occupancy threshold for sparse extraction.
    pub theta: f64,
    pub mlp_hidden: usize,
    /// Levels `0..spf_levels` fuse skips with SPF blocks; deeper levels use
    /// plain skips.
    pub spf_levels: usize,
    /// Whether plain skips add the encoder feature.
    pub skip_bypass: bool,
    pub sparse_points: SparsePoints,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 16,
            levels: 3,
            channels: vec![8, 16, 32],
            n_sparse: 128,
            rho: 4,
            theta: 0.3,
            mlp_hidden: 32,
            spf_levels: 3,
            skip_bypass: true,
            sparse_points: SparsePoints::Weighted,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.grid_resolution;
        if self.levels == 0 || self.channels.len() != self.levels {
            return Err(Error::contract(format!(
                "{} levels need as many channel entries, got {:?}",
                self.levels, self.channels
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::contract("channel counts must be positive"));
        }
        if r == 0 || r % (1 << self.levels) != 0 {
            return Err(Error::contract(format!(
                "grid resolution {r} must be divisible by 2^{}",
                self.levels
            )));
        }
        if self.spf_levels > self.levels {
            return Err(Error::contract(format!(
                "spf_levels {} exceeds {} levels",
                self.spf_levels, self.levels
            )));
        }
        if self.n_sparse == 0 || self.rho == 0 || self.mlp_hidden == 0 {
            return Err(Error::contract("n_sparse, rho and mlp_hidden must be positive"));
        }
        if self.n_sparse > r * r * r {
            return Err(Error::contract(format!(
                "{} sparse points exceed {} cells",
                self.n_sparse,
                r * r * r
            )));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::contract(format!("theta {} outside (0, 1)", self.theta)));
        }
        Ok(())
    }

    pub fn n_dense(&self) -> usize {
        self.n_sparse * self.rho
    }

    /// Half-width of the dense offset box: two cells.
    pub fn offset_scale(&self) -> f64 {
        2.0 / self.grid_resolution as f64
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct SpfIds {
    down: Layer,
    up: Layer,
    fuse: Layer,
}

#[derive(Clone, Copy, Debug)]
enum Skip {
    Spf(SpfIds),
    Plain(Layer),
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<Layer>,
    bottleneck: Layer,
    skips: Vec<Skip>,
    out: Layer,
    mlp: Vec<Layer>,
}

/// Parameters of the completion network.
#[derive(Clone, Debug)]
pub struct CompletionNet {
    cfg: NetConfig,
    params: ParamSet,
    layout: Layout,
}

/// Parameters recorded on one graph.
pub struct BoundNet {
    vars: Vec<Var>,
}

impl BoundNet {
    fn w(&self, l: Layer) -> Var {
        self.vars[l.w.index()]
    }

    fn b(&self, l: Layer) -> Var {
        self.vars[l.b.index()]
    }

    /// Graph vars aligned with [`CompletionNet::params`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Encoder outputs: per-level features `f^0..f^{L-1}` and the bottleneck.
pub struct Encoded {
    pub levels: Vec<Var>,
    pub bottleneck: Var,
}

/// Everything a forward pass produces.
pub struct ForwardOutput {
    /// Sparse cloud node `[n_sparse, 3]`.
    pub sparse: Var,
    /// Dense cloud node `[n_sparse * rho, 3]`.
    pub dense: Var,
    /// Occupancy node `[1, R, R, R]`.
    pub occupancy: Var,
    /// Decoder features `f~^0..f~^{L-1}`.
    pub fused: Vec<Var>,
    pub selection: SparseSelection,
}

fn conv_layer(params: &mut ParamSet, name: &str, co: usize, ci: usize, rng: &mut ChaCha8Rng) -> Layer {
    Layer {
        w: params.normal(format!("{name}.w"), &[co, ci, 3, 3, 3], ci * KVOL, 1.0, rng),
        b: params.zeros(format!("{name}.b"), &[co]),
    }
}

/// Stride-2 transposed conv from `cin` to `cout` channels; the kernel keeps
/// the forward layout `[cin, cout, 3, 3, 3]`.
fn up_layer(params: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Layer {
    Layer {
        w: params.normal(
            format!("{name}.w"),
            &[cin, cout, 3, 3, 3],
            (cin * KVOL / 8).max(1),
            1.0,
            rng,
        ),
        b: params.zeros(format!("{name}.b"), &[cout]),
    }
}

impl CompletionNet {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let ch = &cfg.channels;
        let deepest = ch[cfg.levels - 1];

        let mut encoder = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let ci = if l == 0 { 1 } else { ch[l - 1] };
            encoder.push(conv_layer(&mut params, &format!("enc.{l}"), ch[l], ci, &mut rng));
        }
        let bottleneck = conv_layer(&mut params, "enc.bottleneck", deepest, deepest, &mut rng);

        let mut skips = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let c = ch[l];
            let c_next = if l + 1 < cfg.levels { ch[l + 1] } else { deepest };
            skips.push(if l < cfg.spf_levels {
                Skip::Spf(SpfIds {
                    down: conv_layer(&mut params, &format!("spf.{l}.down"), c, c, &mut rng),
                    up: up_layer(&mut params, &format!("spf.{l}.up"), c + c_next, c, &mut rng),
                    fuse: conv_layer(&mut params, &format!("spf.{l}.fuse"), c, 2 * c, &mut rng),
                })
            } else {
                Skip::Plain(up_layer(&mut params, &format!("skip.{l}.up"), c_next, c, &mut rng))
            });
        }
        let out = conv_layer(&mut params, "dec.out", 1, ch[0], &mut rng);

        let widths = [ch[0] + 4, cfg.mlp_hidden, cfg.mlp_hidden, 3 * cfg.rho];
        let mut mlp = Vec::with_capacity(3);
        for i in 0..3 {
            mlp.push(Layer {
                w: params.normal(
                    format!("mlp.{i}.w"),
                    &[widths[i], widths[i + 1]],
                    widths[i],
                    1.0,
                    &mut rng,
                ),
                b: params.zeros(format!("mlp.{i}.b"), &[widths[i + 1]]),
            });
        }

        Ok(Self {
            cfg,
            params,
            layout: Layout {
                encoder,
                bottleneck,
                skips,
                out,
                mlp,
            },
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the parameters as trainable leaves.
    pub fn bind(&self, graph: &mut Graph) -> BoundNet {
        BoundNet {
            vars: self.params.bind(graph),
        }
    }

    /// Wraps vars already recorded for every parameter, in
    /// [`CompletionNet::params`] order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<BoundNet> {
        if vars.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        Ok(BoundNet { vars })
    }

    /// Records the parameters as constants.
    pub fn bind_frozen(&self, graph: &mut Graph) -> BoundNet {
        BoundNet {
            vars: self.params.bind_frozen(graph),
        }
    }

    fn conv_block(&self, g: &mut Graph, b: &BoundNet, x: Var, l: Layer, stride: usize) -> Result<Var> {
        let y = g.conv3d(x, b.w(l), stride)?;
        let y = g.channel_bias(y, b.b(l))?;
        g.relu(y)
    }

    fn up_block(&self, g: &mut Graph, b: &BoundNet, x: Var, l: Layer) -> Result<Var> {
        let y = g.conv3d_transposed(x, b.w(l), 2)?;
        let y = g.channel_bias(y, b.b(l))?;
        g.relu(y)
    }

    /// Occupancy grid of the input cloud, `[1, R, R, R]`.
    pub fn input_grid(&self, partial: &PointCloud) -> Result<Tensor> {
        Ok(gridding(partial, self.cfg.grid_resolution)?.0.into_values())
    }

    pub fn encode(&self, g: &mut Graph, b: &BoundNet, partial: &PointCloud) -> Result<Encoded> {
        let mut x = g.constant(self.input_grid(partial)?);
        let mut levels = Vec::with_capacity(self.cfg.levels);
        for (l, layer) in self.layout.encoder.iter().enumerate() {
            x = self.conv_block(g, b, x, *layer, if l == 0 { 1 } else { 2 })?;
            levels.push(x);
        }
        let bottleneck = self.conv_block(g, b, x, self.layout.bottleneck, 2)?;
        Ok(Encoded { levels, bottleneck })
    }

    /// One SPF block: gate the skip by `u`, downsample, merge with the
    /// deeper feature, upsample and fuse with the gated skip.
    pub fn spf_fuse(&self, g: &mut Graph, b: &BoundNet, level: usize, skip: Var, deeper: Var, u: Var) -> Result<Var> {
        let ids = match self.layout.skips.get(level) {
            Some(Skip::Spf(ids)) => *ids,
            _ => return Err(Error::contract(format!("level {level} has no SPF block"))),
        };
        let (ss, ds) = (g.value(skip).shape().to_vec(), g.value(deeper).shape().to_vec());
        if ss.len() != 4 || ds.len() != 4 || ds[1] * 2 != ss[1] {
            return Err(Error::dim("spf_fuse", format!("skip {ss:?} vs deeper {ds:?}")));
        }
        let gated = g.scale_by(skip, u)?;
        let down = self.conv_block(g, b, gated, ids.down, 2)?;
        let merged = g.concat(&[down, deeper])?;
        let up = self.up_block(g, b, merged, ids.up)?;
        let both = g.concat(&[up, gated])?;
        self.conv_block(g, b, both, ids.fuse, 1)
    }

    /// Runs the decoder from the bottleneck up; returns the occupancy node
    /// and the fused features `f~^0..f~^{L-1}`.
    pub fn decode(&self, g: &mut Graph, b: &BoundNet, enc: &Encoded, u: Var) -> Result<(Var, Vec<Var>)> {
        let mut fused = vec![enc.bottleneck; self.cfg.levels];
        let mut deeper = enc.bottleneck;
        for l in (0..self.cfg.levels).rev() {
            let f = match self.layout.skips[l] {
                Skip::Spf(_) => self.spf_fuse(g, b, l, enc.levels[l], deeper, u)?,
                Skip::Plain(layer) => {
                    let up = self.up_block(g, b, deeper, layer)?;
                    if self.cfg.skip_bypass {
                        g.add(up, enc.levels[l])?
                    } else {
                        up
                    }
                }
            };
            fused[l] = f;
            deeper = f;
        }
        let logits = g.conv3d(deeper, b.w(self.layout.out), 1)?;
        let logits = g.channel_bias(logits, b.b(self.layout.out))?;
        Ok((g.sigmoid(logits)?, fused))
    }

    /// Dense cloud from the sparse node: per-point features sampled from
    /// `f~^0` and the occupancy, plus the coordinates, go through the MLP,
    /// whose `rho` offsets are squashed to two cell widths.
    pub fn refine_dense(&self, g: &mut Graph, b: &BoundNet, sparse: Var, fused0: Var, occupancy: Var) -> Result<Var> {
        let pts = g.value(sparse).to_points()?;
        let n = pts.len();
        let feat = point_feature_sampling(g, fused0, &pts)?;
        let occ = point_feature_sampling(g, occupancy, &pts)?;
        let mut h = g.concat_cols(&[feat, occ, sparse])?;
        for (i, layer) in self.layout.mlp.iter().enumerate() {
            h = g.linear(h, b.w(*layer), Some(b.b(*layer)))?;
            if i < 2 {
                h = g.relu(h)?;
            }
        }
        let off = g.tanh(h)?;
        let off = g.mul_scalar(off, self.cfg.offset_scale())?;
        let parents = g.concat_cols(&vec![sparse; self.cfg.rho])?;
        let dense = g.add(parents, off)?;
        g.reshape(dense, &[n * self.cfg.rho, 3])
    }

    /// Full pass from a partial cloud and prior node `u` (scalar).
    pub fn forward(&self, g: &mut Graph, b: &BoundNet, partial: &PointCloud, u: Var) -> Result<ForwardOutput> {
        let enc = self.encode(g, b, partial)?;
        let (occupancy, fused) = self.decode(g, b, &enc, u)?;
        let grid = VoxelGrid::new(g.value(occupancy).clone())?;
        let selection = sparse_from_grid(&grid, self.cfg.n_sparse, self.cfg.theta)?;
        let sparse = sparse_points(g, occupancy, &selection, self.cfg.sparse_points)?;
        let dense = self.refine_dense(g, b, sparse, fused[0], occupancy)?;
        Ok(ForwardOutput {
            sparse,
            dense,
            occupancy,
            fused,
            selection,
        })
    }

    /// Inference with frozen parameters; returns `(sparse, dense)`.
    pub fn predict(&self, partial: &PointCloud, u: f64) -> Result<(PointCloud, PointCloud)> {
        let mut g = Graph::new();
        let b = self.bind_frozen(&mut g);
        let uv = g.constant(Tensor::scalar(u));
        let out = self.forward(&mut g, &b, partial, uv)?;
        Ok((
            PointCloud::from_tensor(g.value(out.sparse))?,
            PointCloud::from_tensor(g.value(out.dense))?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 / n as f64 * std::f64::consts::TAU;
                    [0.3 * t.cos(), 0.3 * t.sin(), 0.0]
                })
                .collect(),
        )
    }

    #[test]
    fn encoder_shapes() {
        let net = CompletionNet::new(NetConfig::default(), 0).unwrap();
        let mut g = Graph::new();
        let b = net.bind_frozen(&mut g);
        let enc = net.encode(&mut g, &b, &ring(64)).unwrap();
        assert_eq!(g.value(enc.levels[0]).shape(), [8, 16, 16, 16]);
        assert_eq!(g.value(enc.levels[1]).shape(), [16, 8, 8, 8]);
        assert_eq!(g.value(enc.levels[2]).shape(), [32, 4, 4, 4]);
        assert_eq!(g.value(enc.bottleneck).shape(), [32, 2, 2, 2]);
    }

    #[test]
    fn counts_and_offset_bound() {
        let cfg = NetConfig::default();
        let net = CompletionNet::new(cfg.clone(), 1).unwrap();
        let (sparse, dense) = net.predict(&ring(128), 0.5).unwrap();
        assert_eq!(sparse.len(), 128);
        assert_eq!(dense.len(), 512);
        let delta = cfg.offset_scale();
        for (i, p) in dense.points().iter().enumerate() {
            let parent = sparse.points()[i / cfg.rho];
            assert!((0..3).all(|a| (p[a] - parent[a]).abs() <= delta + 1e-15));
        }
    }

    #[test]
    fn zero_mlp_keeps_dense_points_on_their_parents() {
        let mut net = CompletionNet::new(NetConfig::default(), 2).unwrap();
        let names: Vec<String> = net.params().names().to_vec();
        for (name, t) in names.iter().zip(net.params_mut().values_mut()) {
            if name.starts_with("mlp.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let (sparse, dense) = net.predict(&ring(100), 0.2).unwrap();
        for (i, p) in dense.points().iter().enumerate() {
            assert_eq!(*p, sparse.points()[i / 4]);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            NetConfig {
                grid_resolution: 12,
                ..NetConfig::default()
            },
            NetConfig {
                channels: vec![8, 16],
                ..NetConfig::default()
            },
            NetConfig {
                spf_levels: 4,
                ..NetConfig::default()
            },
            NetConfig {
                theta: 1.0,
                ..NetConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(CompletionNet::new(cfg, 0), Err(Error::Contract(_))));
        }
    }
}
