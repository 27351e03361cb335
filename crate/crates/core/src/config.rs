//! Pipeline configuration and the plain-text `key=value` format used for
//! config files and metadata sidecars.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::BprConfig;
use crate::encoder::{Layout, Normalization, DEFAULT_SLICES};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_KS;

/// Ordered `key=value` record. Blank lines and `#` comments are ignored
/// on parse; rendering preserves insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Copies every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.set(format!("{prefix}{k}"), v);
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected key=value, found `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "empty key".into(),
                });
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Invalid(format!("bad value for `{key}`: `{v}`")))
            })
            .transpose()
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Path of the metadata sidecar that accompanies an artifact.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Standard deviation of the reference samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefScale {
    /// Match the entry standard deviation of the features being encoded.
    Auto,
    Fixed(f64),
}

impl fmt::Display for RefScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefScale::Auto => f.write_str("auto"),
            RefScale::Fixed(x) => write!(f, "{x}"),
        }
    }
}

impl FromStr for RefScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(RefScale::Auto);
        }
        match s.parse::<f64>() {
            Ok(x) if x.is_finite() && x >= 0.0 => Ok(RefScale::Fixed(x)),
            _ => Err(Error::Invalid(format!("reference scale `{s}` is not `auto` or a number >= 0"))),
        }
    }
}

/// Comma-separated K list.
pub fn parse_ks(s: &str) -> Result<Vec<usize>> {
    let ks = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Invalid(format!("bad K list `{s}`")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Invalid(format!("bad K list `{s}`")));
    }
    Ok(ks)
}

fn render_ks(ks: &[usize]) -> String {
    ks.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Every tunable of the pipeline. All seeds are explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub encodings: Option<PathBuf>,
    pub report: Option<PathBuf>,

    pub dim: usize,
    pub depth: usize,
    pub epochs: usize,
    pub lr: f64,
    pub reg: f64,
    pub batch_size: usize,
    pub train_seed: u64,

    pub slices: usize,
    pub layout: Layout,
    pub normalization: Normalization,
    pub ref_scale: RefScale,
    pub projection_seed: u64,
    pub reference_seed: u64,

    pub ks: Vec<usize>,
    pub num_queries: usize,
    pub eval_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let bpr = BprConfig::default();
        PipelineConfig {
            data: None,
            graph: None,
            features: None,
            encodings: None,
            report: None,
            dim: bpr.dim,
            depth: bpr.depth,
            epochs: bpr.epochs,
            lr: bpr.lr,
            reg: bpr.reg,
            batch_size: bpr.batch_size,
            train_seed: bpr.seed,
            slices: DEFAULT_SLICES,
            layout: Layout::Concat,
            normalization: Normalization::Isometric,
            ref_scale: RefScale::Auto,
            projection_seed: 17,
            reference_seed: 29,
            ks: DEFAULT_KS.to_vec(),
            num_queries: 1000,
            eval_seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn bpr(&self) -> BprConfig {
        BprConfig {
            dim: self.dim,
            depth: self.depth,
            epochs: self.epochs,
            lr: self.lr,
            reg: self.reg,
            batch_size: self.batch_size,
            init_std: BprConfig::default().init_std,
            seed: self.train_seed,
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        kv.set("data", path(&self.data));
        kv.set("graph", path(&self.graph));
        kv.set("features", path(&self.features));
        kv.set("encodings", path(&self.encodings));
        kv.set("report", path(&self.report));
        kv.set("dim", self.dim);
        kv.set("depth", self.depth);
        kv.set("epochs", self.epochs);
        kv.set("lr", self.lr);
        kv.set("reg", self.reg);
        kv.set("batch_size", self.batch_size);
        kv.set("train_seed", self.train_seed);
        kv.set("slices", self.slices);
        kv.set("layout", self.layout);
        kv.set("normalization", self.normalization);
        kv.set("ref_scale", self.ref_scale);
        kv.set("projection_seed", self.projection_seed);
        kv.set("reference_seed", self.reference_seed);
        kv.set("ks", render_ks(&self.ks));
        kv.set("num_queries", self.num_queries);
        kv.set("eval_seed", self.eval_seed);
        kv
    }

    /// Starts from defaults and applies every recognised key. Unknown keys
    /// are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = PipelineConfig::default();
        c.apply(kv)?;
        Ok(c)
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, _) in kv.iter() {
            if !Self::KEYS.contains(&k) {
                return Err(Error::Invalid(format!("unknown config key `{k}`")));
            }
        }
        let path = |key: &str| kv.get(key).map(|v| (!v.is_empty()).then(|| PathBuf::from(v)));
        macro_rules! take {
            ($field:ident, $key:literal) => {
                if let Some(v) = kv.parsed($key)? {
                    self.$field = v;
                }
            };
        }
        if let Some(p) = path("data") {
            self.data = p;
        }
        if let Some(p) = path("graph") {
            self.graph = p;
        }
        if let Some(p) = path("features") {
            self.features = p;
        }
        if let Some(p) = path("encodings") {
            self.encodings = p;
        }
        if let Some(p) = path("report") {
            self.report = p;
        }
        take!(dim, "dim");
        take!(depth, "depth");
        take!(epochs, "epochs");
        take!(lr, "lr");
        take!(reg, "reg");
        take!(batch_size, "batch_size");
        take!(train_seed, "train_seed");
        take!(slices, "slices");
        take!(layout, "layout");
        take!(normalization, "normalization");
        take!(ref_scale, "ref_scale");
        take!(projection_seed, "projection_seed");
        take!(reference_seed, "reference_seed");
        if let Some(v) = kv.get("ks") {
            self.ks = parse_ks(v)?;
        }
        take!(num_queries, "num_queries");
        take!(eval_seed, "eval_seed");
        Ok(())
    }

    const KEYS: [&'static str; 21] = [
        "data",
        "graph",
        "features",
        "encodings",
        "report",
        "dim",
        "depth",
        "epochs",
        "lr",
        "reg",
        "batch_size",
        "train_seed",
        "slices",
        "layout",
        "normalization",
        "ref_scale",
        "projection_seed",
        "reference_seed",
        "ks",
        "num_queries",
        "eval_seed",
    ];
}
