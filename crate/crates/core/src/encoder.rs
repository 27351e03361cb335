//! Wasserstein sub-graph feature encoding.
//!
//! A user's `L+1` layer vectors are treated as an empirical distribution.
//! Both the user and a fixed random reference distribution are sliced along
//! `S` random unit directions; in each slice the user's projected samples
//! are transported onto the reference by rank matching, and the residuals
//! against the reference become coordinates of the encoding. With the
//! isometric scaling the Euclidean distance between two encodings equals
//! the Monte-Carlo sliced Wasserstein-2 distance over the same directions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::backbone::LayerFeatureSet;
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

const ENCODING_MAGIC: &[u8; 4] = b"WSFV";
const ENCODING_VERSION: u32 = 1;

/// Default number of slices.
pub const DEFAULT_SLICES: usize = 64;

/// `S` unit directions on the `(d−1)`-sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    dim: usize,
    directions: Vec<f64>,
    seed: Option<u64>,
}

impl ProjectionSet {
    /// Draws `count` directions uniformly on the sphere by normalising
    /// standard Gaussian vectors from a seeded stream.
    pub fn sample(count: usize, dim: usize, seed: u64) -> Self {
        assert!(count >= 1 && dim >= 1, "need at least one slice and one dimension");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut directions = Vec::with_capacity(count * dim);
        let mut v = vec![0.0f64; dim];
        for _ in 0..count {
            let norm = loop {
                v.iter_mut()
                    .for_each(|x| *x = StandardNormal.sample(&mut rng));
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-150 {
                    break n;
                }
            };
            directions.extend(v.iter().map(|x| x / norm));
        }
        ProjectionSet {
            dim,
            directions,
            seed: Some(seed),
        }
    }

    /// Uses the given directions verbatim after checking they are unit length.
    pub fn from_directions(dirs: Vec<Vec<f64>>) -> Result<Self> {
        let dim = dirs.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        if dim == 0 {
            return Err(Error::Dimension("directions need at least one coordinate".into()));
        }
        let mut directions = Vec::with_capacity(dirs.len() * dim);
        for d in &dirs {
            if d.len() != dim {
                return Err(Error::Dimension("directions of unequal length".into()));
            }
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("direction has norm {norm}, expected 1")));
            }
            directions.extend_from_slice(d);
        }
        Ok(ProjectionSet {
            dim,
            directions,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn direction(&self, s: usize) -> &[f64] {
        &self.directions[s * self.dim..(s + 1) * self.dim]
    }

    pub fn directions(&self) -> impl Iterator<Item = &[f64]> {
        self.directions.chunks_exact(self.dim)
    }
}

/// Fixed random reference distribution: `L+1` Gaussian vectors in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    layers: usize,
    dim: usize,
    samples: Vec<f64>,
    seed: Option<u64>,
    scale: f64,
}

impl ReferenceSet {
    /// `depth + 1` vectors with i.i.d. `N(0, scale²)` entries.
    pub fn gaussian(depth: usize, dim: usize, seed: u64, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("reference dimension must be at least 1".into()));
        }
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::Invalid(format!("reference scale {scale} must be finite and >= 0")));
        }
        let layers = depth + 1;
        let samples = if scale == 0.0 {
            vec![0.0; layers * dim]
        } else {
            let normal = Normal::new(0.0, scale).expect("validated scale");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..layers * dim).map(|_| normal.sample(&mut rng)).collect()
        };
        Ok(ReferenceSet {
            layers,
            dim,
            samples,
            seed: Some(seed),
            scale,
        })
    }

    /// Uses the given `(L+1) × d` row-major block as the reference.
    pub fn from_samples(layers: usize, dim: usize, samples: Vec<f64>) -> Result<Self> {
        if layers == 0 || dim == 0 || samples.len() != layers * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {layers}x{dim} reference",
                samples.len()
            )));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite reference entry".into()));
        }
        Ok(ReferenceSet {
            layers,
            dim,
            samples,
            seed: None,
            scale: f64::NAN,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// How per-slice residuals are combined into the final vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// All `S(L+1)` residuals, slice-major.
    Concat,
    /// One value per slice: the mean residual over layers.
    Sum,
    /// One value per slice: the largest residual over layers.
    Max,
}

impl Layout {
    pub fn tag(self) -> u8 {
        match self {
            Layout::Concat => 0,
            Layout::Sum => 1,
            Layout::Max => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Layout::Concat),
            1 => Ok(Layout::Sum),
            2 => Ok(Layout::Max),
            t => Err(Error::Format(format!("unknown layout tag {t}"))),
        }
    }

    /// Encoding width for `slices` directions and `layers = L+1`.
    pub fn width(self, slices: usize, layers: usize) -> usize {
        match self {
            Layout::Concat => slices * layers,
            Layout::Sum | Layout::Max => slices,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Concat => "concat",
            Layout::Sum => "sum",
            Layout::Max => "max",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Layout::Concat),
            "sum" => Ok(Layout::Sum),
            "max" => Ok(Layout::Max),
            other => Err(Error::Invalid(format!("unknown layout `{other}`"))),
        }
    }
}

/// Per-coordinate scaling of the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `1/sqrt(S(L+1))` for concat (`1/sqrt(S)` for sum/max): encoding
    /// distances equal the Monte-Carlo sliced W2 exactly.
    #[default]
    Isometric,
    /// `1/(S(L+1))`, the plain `1/(L+1)` and `1/S` prefactors. Distances
    /// are a constant multiple of the isometric ones.
    Literal,
}

impl Normalization {
    fn scale(self, layout: Layout, slices: usize, layers: usize) -> f64 {
        let (s, l) = (slices as f64, layers as f64);
        match (self, layout) {
            (Normalization::Isometric, Layout::Concat) => 1.0 / (s * l).sqrt(),
            (Normalization::Isometric, _) => 1.0 / s.sqrt(),
            (Normalization::Literal, _) => 1.0 / (s * l),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Isometric => "isometric",
            Normalization::Literal => "literal",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isometric" => Ok(Normalization::Isometric),
            "literal" => Ok(Normalization::Literal),
            other => Err(Error::Invalid(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Projects each of the `L+1` vectors in `features` onto `theta`.
pub fn project(features: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    let d = theta.len();
    if d == 0 || features.len() % d != 0 {
        return Err(Error::Dimension(format!(
            "{} feature values cannot be split into vectors of dimension {d}",
            features.len()
        )));
    }
    Ok(features
        .chunks_exact(d)
        .map(|v| v.iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect())
}

/// Stable ascending argsort.
fn argsort(values: &[f64], order: &mut Vec<usize>) {
    order.clear();
    order.extend(0..values.len());
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
}

/// Monotone transport of `user` onto `reference` in one dimension:
/// `out[l]` is the element of `user` whose ascending rank equals the rank of
/// `reference[l]` within `reference`. Ties keep original index order.
pub fn ot_map_ranks(user: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if user.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "user has {} projected samples, reference has {}",
            user.len(),
            reference.len()
        )));
    }
    let mut ref_order = Vec::new();
    let mut user_order = Vec::new();
    argsort(reference, &mut ref_order);
    argsort(user, &mut user_order);
    let mut out = vec![0.0; user.len()];
    for (&r, &u) in ref_order.iter().zip(&user_order) {
        out[r] = user[u];
    }
    Ok(out)
}

/// One entity's encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEncoding {
    pub values: Vec<f64>,
    pub layout: Layout,
    /// Scale applied to every coordinate.
    pub scale: f64,
}

/// Per-slice view of the reference, computed once and shared by every user.
#[derive(Debug, Clone)]
struct RefSlice {
    projected: Vec<f64>,
    order: Vec<usize>,
}

/// Encoder bound to a reference and a projection set.
#[derive(Debug, Clone)]
pub struct Encoder {
    reference: ReferenceSet,
    projections: ProjectionSet,
    layout: Layout,
    normalization: Normalization,
    slices: Vec<RefSlice>,
    scale: f64,
}

impl Encoder {
    pub fn new(
        reference: ReferenceSet,
        projections: ProjectionSet,
        layout: Layout,
        normalization: Normalization,
    ) -> Result<Self> {
        if reference.dim() != projections.dim() {
            return Err(Error::Dimension(format!(
                "reference dim {} vs projection dim {}",
                reference.dim(),
                projections.dim()
            )));
        }
        let slices = projections
            .directions()
            .map(|theta| {
                let projected = project(reference.samples(), theta)?;
                let mut order = Vec::new();
                argsort(&projected, &mut order);
                Ok(RefSlice { projected, order })
            })
            .collect::<Result<Vec<_>>>()?;
        let scale = normalization.scale(layout, projections.len(), reference.layers());
        Ok(Encoder {
            reference,
            projections,
            layout,
            normalization,
            slices,
            scale,
        })
    }

    pub fn reference(&self) -> &ReferenceSet {
        &self.reference
    }

    pub fn projections(&self) -> &ProjectionSet {
        &self.projections
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn width(&self) -> usize {
        self.layout
            .width(self.projections.len(), self.reference.layers())
    }

    fn check_row(&self, features: &[f64]) -> Result<()> {
        let expected = self.reference.layers() * self.reference.dim();
        if features.len() != expected {
            return Err(Error::Dimension(format!(
                "feature block has {} values, expected {} layers x {} dims",
                features.len(),
                self.reference.layers(),
                self.reference.dim()
            )));
        }
        Ok(())
    }

    /// Encodes one `(L+1) × d` feature block into `out` (length `width()`).
    fn encode_into(&self, features: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        let layers = self.reference.layers();
        let d = self.reference.dim();
        for (s, (theta, slice)) in self.projections.directions().zip(&self.slices).enumerate() {
            scratch.projected.clear();
            scratch
                .projected
                .extend(features.chunks_exact(d).map(|v| {
                    v.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
                }));
            argsort(&scratch.projected, &mut scratch.order);
            scratch.residual.clear();
            scratch.residual.resize(layers, 0.0);
            for (&r, &u) in slice.order.iter().zip(&scratch.order) {
                scratch.residual[r] = scratch.projected[u] - slice.projected[r];
            }
            match self.layout {
                Layout::Concat => {
                    let dst = &mut out[s * layers..(s + 1) * layers];
                    for (o, r) in dst.iter_mut().zip(&scratch.residual) {
                        *o = self.scale * r;
                    }
                }
                Layout::Sum => {
                    let mean = scratch.residual.iter().sum::<f64>() / layers as f64;
                    out[s] = self.scale * mean;
                }
                Layout::Max => {
                    let max = scratch
                        .residual
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max);
                    out[s] = self.scale * max;
                }
            }
        }
    }

    /// Encodes one `(L+1) × d` feature block.
    pub fn encode(&self, features: &[f64]) -> Result<UserEncoding> {
        self.check_row(features)?;
        let mut values = vec![0.0; self.width()];
        self.encode_into(features, &mut values, &mut Scratch::default());
        Ok(UserEncoding {
            values,
            layout: self.layout,
            scale: self.scale,
        })
    }

    fn check_set(&self, features: &LayerFeatureSet) -> Result<()> {
        if features.dim() != self.reference.dim() {
            return Err(Error::Dimension(format!(
                "feature dim {} vs encoder dim {}",
                features.dim(),
                self.reference.dim()
            )));
        }
        if features.layers() != self.reference.layers() {
            return Err(Error::Dimension(format!(
                "features have {} layers, reference has {}",
                features.layers(),
                self.reference.layers()
            )));
        }
        Ok(())
    }

    /// Encodes every entity of `features`. Rows are independent, so the
    /// result is identical for every `exec`.
    pub fn encode_all(&self, features: &LayerFeatureSet, exec: Exec) -> Result<EncodingMatrix> {
        self.check_set(features)?;
        let width = self.width();
        let mut data = vec![0.0; features.entities() * width];
        par::for_each_row(&mut data, width, exec, |m, row| {
            let mut scratch = Scratch::default();
            self.encode_into(features.entity(m), row, &mut scratch);
        });
        Ok(EncodingMatrix {
            rows: features.entities(),
            dim: width,
            layout: self.layout,
            data,
        })
    }
}

#[derive(Debug, Default)]
struct Scratch {
    projected: Vec<f64>,
    order: Vec<usize>,
    residual: Vec<f64>,
}

/// Encodes a single feature block against `reference` and `projections`.
pub fn encode_user(
    features: &[f64],
    reference: &ReferenceSet,
    projections: &ProjectionSet,
    layout: Layout,
    normalization: Normalization,
) -> Result<UserEncoding> {
    Encoder::new(reference.clone(), projections.clone(), layout, normalization)?.encode(features)
}

/// Encodes every entity of `features`.
pub fn encode_all(
    features: &LayerFeatureSet,
    reference: &ReferenceSet,
    projections: &ProjectionSet,
    layout: Layout,
    normalization: Normalization,
    exec: Exec,
) -> Result<EncodingMatrix> {
    Encoder::new(reference.clone(), projections.clone(), layout, normalization)?
        .encode_all(features, exec)
}

/// Row-major `rows × dim` matrix of encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrix {
    rows: usize,
    dim: usize,
    layout: Layout,
    data: Vec<f64>,
}

impl EncodingMatrix {
    pub fn new(rows: usize, dim: usize, layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{dim} encoding matrix",
                data.len()
            )));
        }
        Ok(EncodingMatrix {
            rows,
            dim,
            layout,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Serialises to the `WSFV` binary format (32-bit float payload).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(17 + 4 * self.data.len());
        out.extend_from_slice(ENCODING_MAGIC);
        binio::put_u32(&mut out, ENCODING_VERSION);
        binio::put_u32(&mut out, binio::to_u32(self.rows, "rows")?);
        binio::put_u32(&mut out, binio::to_u32(self.dim, "dim")?);
        out.push(self.layout.tag());
        for &x in &self.data {
            binio::put_f32(&mut out, x as f32);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4).ok() != Some(ENCODING_MAGIC.as_slice()) {
            return Err(Error::Format("not a WSFE encoding file".into()));
        }
        let version = r.u32()?;
        if version != ENCODING_VERSION {
            return Err(Error::Format(format!("unsupported encoding version {version}")));
        }
        let rows = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let layout = Layout::from_tag(r.u8()?)?;
        let payload = r.f32_vec(rows * dim)?;
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after encoding payload".into()));
        }
        Self::new(rows, dim, layout, payload.into_iter().map(f64::from).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_all(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&binio::read_all(path.as_ref())?)
    }
}
