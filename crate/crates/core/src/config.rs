//! Experiment configuration: one JSON document describing a dataset, a
//! kernel, the memory system and the reordering/prefetch variants to compare
//! against the unmodified baseline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, ClusterModel, RowOrder};
use crate::dramsim::DramConfig;
use crate::error::{Error, Result};
use crate::kernels::{PageMapping, DEFAULT_BASE, DEFAULT_ISSUE_GAP, DEFAULT_LEAF_SIZE};
use crate::matrix::{self, FeatureMatrix, MatrixMeta};
use crate::memsys::{CacheConfig, PrefetchConfig};
use crate::sfc::DEFAULT_BITS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Knn {
        k: usize,
        queries: usize,
        #[serde(default = "default_leaf")]
        leaf_size: usize,
    },
    Dbscan {
        radius: f64,
        #[serde(default = "default_leaf")]
        leaf_size: usize,
    },
    Dtree {
        max_depth: usize,
    },
    Gather {
        count: usize,
    },
}

fn default_leaf() -> usize {
    DEFAULT_LEAF_SIZE
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Knn { .. } => "knn",
            KernelSpec::Dbscan { .. } => "dbscan",
            KernelSpec::Dtree { .. } => "dtree",
            KernelSpec::Gather { .. } => "gather",
        }
    }

    /// Whether the kernel reads feature values (gather only moves rows).
    pub fn needs_features(&self) -> bool {
        !matches!(self, KernelSpec::Gather { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Knn { k, leaf_size, .. } if k == 0 || leaf_size == 0 => {
                Err(Error::input("knn needs k >= 1 and leaf_size >= 1"))
            }
            KernelSpec::Dbscan { radius, leaf_size } if !(radius > 0.0) || leaf_size == 0 => {
                Err(Error::input("dbscan needs radius > 0 and leaf_size >= 1"))
            }
            KernelSpec::Dtree { max_depth: 0 } => Err(Error::input("dtree needs max_depth >= 1")),
            KernelSpec::Gather { count: 0 } => Err(Error::input("gather needs count >= 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian mixture; labels are cluster ids.
    Clusters {
        n: usize,
        m: usize,
        clusters: usize,
        #[serde(default = "default_extent")]
        extent: f64,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        layout: RowOrder,
    },
    /// Uniform on the unit cube; label = whether the first feature is >= 0.5.
    Uniform { n: usize, m: usize },
    /// Raw matrix written by `gen`/`reorder`; labels read from the
    /// `.labels` file next to it when present.
    File { path: PathBuf },
}

fn default_extent() -> f64 {
    1000.0
}

fn default_spread() -> f64 {
    10.0
}

impl DatasetSpec {
    pub fn shape(&self) -> Result<(usize, usize)> {
        match self {
            DatasetSpec::Clusters { n, m, .. } | DatasetSpec::Uniform { n, m } => Ok((*n, *m)),
            DatasetSpec::File { path } => {
                let text = std::fs::read_to_string(matrix::sidecar_path(path))?;
                let meta: MatrixMeta = serde_json::from_str(&text)?;
                Ok((meta.n, meta.m))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Clusters { n, m, clusters, .. } if *n == 0 || *m == 0 || *clusters == 0 => {
                Err(Error::input("clustered dataset needs n, m, clusters >= 1"))
            }
            DatasetSpec::Uniform { n, m } if *n == 0 || *m == 0 => {
                Err(Error::input("uniform dataset needs n, m >= 1"))
            }
            DatasetSpec::File { path } if !path.exists() => Err(Error::input(format!(
                "dataset file {} does not exist",
                path.display()
            ))),
            _ => Ok(()),
        }
    }

    /// Materialize the matrix and labels (labels may be absent for files).
    pub fn load(&self, seed: u64) -> Result<(FeatureMatrix, Option<Vec<u32>>)> {
        match *self {
            DatasetSpec::Clusters {
                n,
                m,
                clusters,
                extent,
                spread,
                layout,
            } => {
                let model = ClusterModel::new(clusters, m, extent, spread, seed)?;
                let (ds, labels) = model.sample(n, layout, seed.wrapping_add(1))?;
                Ok((ds, Some(labels)))
            }
            DatasetSpec::Uniform { n, m } => {
                let ds = datagen::uniform(n, m, seed)?;
                let labels = ds.rows().map(|r| (r[0] >= 0.5) as u32).collect();
                Ok((ds, Some(labels)))
            }
            DatasetSpec::File { ref path } => {
                let ds = FeatureMatrix::read(path)?;
                let lp = matrix::labels_path(path);
                let labels = if lp.exists() { Some(matrix::read_labels(&lp)?) } else { None };
                Ok((ds, labels))
            }
        }
    }

    /// Query points for kNN: drawn from the same mixture for clustered data,
    /// uniformly over the dataset's bounding box otherwise.
    pub fn queries(&self, dataset: &FeatureMatrix, count: usize, data_seed: u64, seed: u64) -> Result<FeatureMatrix> {
        if let DatasetSpec::Clusters {
            m,
            clusters,
            extent,
            spread,
            ..
        } = *self
        {
            return ClusterModel::new(clusters, m, extent, spread, data_seed)?.sample_queries(count, seed);
        }
        let m = dataset.m();
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for row in dataset.rows() {
            for j in 0..m {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        let unit = datagen::uniform(count, m, seed)?;
        let data = unit
            .data()
            .chunks(m.max(1))
            .flat_map(|r| (0..m).map(|j| lo[j] + r[j] * (hi[j] - lo[j])).collect::<Vec<_>>())
            .collect();
        FeatureMatrix::new(count, m, data)
    }
}

/// Reordering applied by a variant. `zorder-comp` and `block` reorder
/// computation; the rest permute the dataset layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReorderSpec {
    FirstTouch,
    Rcb {
        #[serde(default = "default_leaf")]
        leaf_size: usize,
    },
    Hilbert {
        #[serde(default = "default_bits")]
        bits: u32,
    },
    Zorder {
        #[serde(default = "default_bits")]
        bits: u32,
    },
    Block {
        #[serde(default = "default_window")]
        window: usize,
    },
    ZorderComp {
        #[serde(default = "default_bits")]
        bits: u32,
    },
}

fn default_bits() -> u32 {
    DEFAULT_BITS
}

pub const DEFAULT_WINDOW: usize = 4096;

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl ReorderSpec {
    pub const METHODS: [&'static str; 6] = ["first-touch", "rcb", "hilbert", "zorder", "block", "zorder-comp"];

    pub fn method(&self) -> &'static str {
        match self {
            ReorderSpec::FirstTouch => "first-touch",
            ReorderSpec::Rcb { .. } => "rcb",
            ReorderSpec::Hilbert { .. } => "hilbert",
            ReorderSpec::Zorder { .. } => "zorder",
            ReorderSpec::Block { .. } => "block",
            ReorderSpec::ZorderComp { .. } => "zorder-comp",
        }
    }

    /// Method with default parameters.
    pub fn from_method(name: &str) -> Result<Self> {
        Ok(match name {
            "first-touch" => ReorderSpec::FirstTouch,
            "rcb" => ReorderSpec::Rcb { leaf_size: DEFAULT_LEAF_SIZE },
            "hilbert" => ReorderSpec::Hilbert { bits: DEFAULT_BITS },
            "zorder" => ReorderSpec::Zorder { bits: DEFAULT_BITS },
            "block" => ReorderSpec::Block { window: DEFAULT_WINDOW },
            "zorder-comp" => ReorderSpec::ZorderComp { bits: DEFAULT_BITS },
            other => {
                return Err(Error::input(format!(
                    "unknown reorder method `{other}` (expected one of {})",
                    Self::METHODS.join(", ")
                )))
            }
        })
    }

    /// Permutes the dataset rather than the order of work.
    pub fn is_layout(&self) -> bool {
        !matches!(self, ReorderSpec::Block { .. } | ReorderSpec::ZorderComp { .. })
    }

    pub fn needs_features(&self) -> bool {
        matches!(
            self,
            ReorderSpec::Rcb { .. } | ReorderSpec::Hilbert { .. } | ReorderSpec::Zorder { .. } | ReorderSpec::ZorderComp { .. }
        )
    }

    /// Reject method/kernel pairs that have no meaning.
    pub fn check_kernel(&self, kernel: &KernelSpec) -> Result<()> {
        let ok = match self {
            // query/point order only exists for neighbour searches
            ReorderSpec::ZorderComp { .. } => matches!(kernel, KernelSpec::Knn { .. } | KernelSpec::Dbscan { .. }),
            s if s.needs_features() => kernel.needs_features(),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!(
                "reorder method `{}` is not applicable to the {} kernel",
                self.method(),
                kernel.name()
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ReorderSpec::Rcb { leaf_size: 0 } => Err(Error::input("rcb leaf_size must be >= 1")),
            ReorderSpec::Block { window: 0 } => Err(Error::input("block window must be >= 1")),
            ReorderSpec::Hilbert { bits } | ReorderSpec::Zorder { bits } | ReorderSpec::ZorderComp { bits }
                if bits == 0 =>
            {
                Err(Error::input("curve bits must be >= 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub reorder: Option<ReorderSpec>,
    /// Replaces the experiment-wide prefetch configuration.
    #[serde(default)]
    pub prefetch: Option<PrefetchConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddressSpec {
    pub base: u64,
    pub issue_gap: u32,
    pub page_mapping: PageMapping,
}

impl Default for AddressSpec {
    fn default() -> Self {
        Self {
            base: DEFAULT_BASE,
            issue_gap: DEFAULT_ISSUE_GAP,
            page_mapping: PageMapping::Identity,
        }
    }
}

/// Seeds for every stochastic stage; all are required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Dataset generation.
    pub data: u64,
    /// Query points (kNN) and gather indices.
    pub kernel: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Results CSV; printed to stdout when absent.
    pub csv: Option<PathBuf>,
    /// Per-variant reordering overhead CSV.
    pub overhead_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub prefetch: PrefetchConfig,
    #[serde(default)]
    pub dram: DramConfig,
    #[serde(default)]
    pub address: AddressSpec,
    pub seeds: Seeds,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config; a relative dataset path resolves against the config's
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if let DatasetSpec::File { path: ds } = &mut cfg.dataset {
            if ds.is_relative() {
                if let Some(dir) = path.parent() {
                    *ds = dir.join(&*ds);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.kernel.validate()?;
        self.cache.validate()?;
        self.prefetch.validate()?;
        self.dram.validate()?;
        let mut names = std::collections::HashSet::new();
        names.insert("baseline");
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                return Err(Error::input(format!("duplicate variant name `{}`", v.name)));
            }
            if let Some(r) = &v.reorder {
                r.validate()?;
                r.check_kernel(&self.kernel)?;
            }
            if let Some(p) = &v.prefetch {
                p.validate()?;
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; identifies the producing
    /// config in every result row.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
