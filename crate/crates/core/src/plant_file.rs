//! Plant description files (JSON or TOML) and their content hash.
//!
//! ```json
//! {
//!   "subsystems": [
//!     {
//!       "id": 1,
//!       "a": [[0.5]], "b": [[1.0]], "c": [[1.0]], "d": [[1.0]],
//!       "couplings": { "2": [[0.1]] },
//!       "error_set": { "box": [1.0] },
//!       "dist_set": { "generators": [[0.1]], "facets": [[10.0], [-10.0]] }
//!     }
//!   ]
//! }
//! ```
//!
//! Matrices are arrays of rows. A matrix with no columns is written as an
//! array of empty rows; one with no rows as `[]`. Sets are either a box of
//! half-widths or an explicit generator/facet pair whose facet rows have unit
//! support.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{mat_from_rows, mat_to_rows};
use crate::model::{ModelError, PlantGraph, Subsystem, SubsystemId};
use crate::pnp::PlugIn;
use crate::zonotope::{Zonotope, ZonotopeError};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Error)]
pub enum PlantFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid TOML: {0}")]
    TomlRead(#[from] toml::de::Error),
    #[error("cannot write TOML: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error("subsystem {id}: {what} has rows of different lengths")]
    Ragged { id: SubsystemId, what: String },
    #[error("subsystem {id}: {what}: {source}")]
    Set {
        id: SubsystemId,
        what: &'static str,
        #[source]
        source: ZonotopeError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Toml,
}

impl Format {
    /// `.toml` selects TOML, anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("toml") => Format::Toml,
            _ => Format::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetSpec {
    Box {
        #[serde(rename = "box")]
        half_widths: Vec<f64>,
    },
    Explicit { generators: Rows, facets: Rows },
}

impl SetSpec {
    pub fn from_zonotope(z: &Zonotope) -> Self {
        match z.box_half_widths() {
            Some(half_widths) => SetSpec::Box { half_widths },
            None => SetSpec::Explicit {
                generators: mat_to_rows(z.generators()),
                facets: mat_to_rows(z.facets()),
            },
        }
    }

    fn to_zonotope(&self, id: SubsystemId, what: &'static str) -> Result<Zonotope, PlantFileError> {
        let set_err = |source| PlantFileError::Set { id, what, source };
        match self {
            SetSpec::Box { half_widths } => Zonotope::from_box(half_widths).map_err(set_err),
            SetSpec::Explicit { generators, facets } => {
                let ragged = || PlantFileError::Ragged {
                    id,
                    what: what.to_string(),
                };
                let g = mat_from_rows(generators, 0).ok_or_else(ragged)?;
                let h = mat_from_rows(facets, g.nrows()).ok_or_else(ragged)?;
                Zonotope::new(g, h).map_err(set_err)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub id: SubsystemId,
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
    #[serde(default)]
    pub couplings: BTreeMap<SubsystemId, Rows>,
    pub error_set: SetSpec,
    pub dist_set: SetSpec,
}

impl SubsystemSpec {
    pub fn from_subsystem(s: &Subsystem) -> Self {
        Self {
            id: s.id,
            a: mat_to_rows(&s.a),
            b: mat_to_rows(&s.b),
            c: mat_to_rows(&s.c),
            d: mat_to_rows(&s.d),
            couplings: s.couplings.iter().map(|(j, m)| (*j, mat_to_rows(m))).collect(),
            error_set: SetSpec::from_zonotope(&s.error_set),
            dist_set: SetSpec::from_zonotope(&s.dist_set),
        }
    }

    /// Converts to a [`Subsystem`]. Dimension consistency across blocks is
    /// checked later by graph validation.
    pub fn to_subsystem(&self) -> Result<Subsystem, PlantFileError> {
        let id = self.id;
        let matrix = |rows: &Rows, cols_if_empty: usize, what: &str| {
            mat_from_rows(rows, cols_if_empty).ok_or_else(|| PlantFileError::Ragged {
                id,
                what: what.to_string(),
            })
        };
        let a = matrix(&self.a, 0, "A")?;
        let n = a.nrows();
        let couplings = self
            .couplings
            .iter()
            .map(|(j, rows)| Ok((*j, matrix(rows, 0, &format!("A_{{{id},{j}}}"))?)))
            .collect::<Result<BTreeMap<_, _>, PlantFileError>>()?;
        Ok(Subsystem {
            id,
            b: matrix(&self.b, 0, "B")?,
            c: matrix(&self.c, n, "C")?,
            d: matrix(&self.d, 0, "D")?,
            a,
            couplings,
            error_set: self.error_set.to_zonotope(id, "error set")?,
            dist_set: self.dist_set.to_zonotope(id, "disturbance set")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantFile {
    pub subsystems: Vec<SubsystemSpec>,
}

impl PlantFile {
    pub fn from_graph(graph: &PlantGraph) -> Self {
        Self {
            subsystems: graph.subsystems().map(SubsystemSpec::from_subsystem).collect(),
        }
    }

    pub fn to_graph(&self) -> Result<PlantGraph, PlantFileError> {
        let subsystems = self
            .subsystems
            .iter()
            .map(SubsystemSpec::to_subsystem)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PlantGraph::new(subsystems)?)
    }

    pub fn parse(text: &str, format: Format) -> Result<Self, PlantFileError> {
        Ok(match format {
            Format::Json => serde_json::from_str(text)?,
            Format::Toml => toml::from_str(text)?,
        })
    }

    pub fn render(&self, format: Format) -> Result<String, PlantFileError> {
        Ok(match format {
            Format::Json => serde_json::to_string_pretty(self)? + "\n",
            Format::Toml => toml::to_string(self)?,
        })
    }

    pub fn read(path: &Path) -> Result<Self, PlantFileError> {
        let text = fs::read_to_string(path).map_err(|source| PlantFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, Format::from_path(path))
    }

    pub fn write(&self, path: &Path) -> Result<(), PlantFileError> {
        let text = self.render(Format::from_path(path))?;
        fs::write(path, text).map_err(|source| PlantFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// SHA-256 of the compact JSON rendering, independent of the on-disk format.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("plant files always serialize");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// A subsystem to plug in, with the coupling blocks `A_j,new` that existing
/// subsystems `j` receive from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugInFile {
    pub subsystem: SubsystemSpec,
    #[serde(default)]
    pub child_couplings: BTreeMap<SubsystemId, Rows>,
}

impl PlugInFile {
    pub fn from_plug_in(plug: &PlugIn) -> Self {
        Self {
            subsystem: SubsystemSpec::from_subsystem(&plug.subsystem),
            child_couplings: plug.child_couplings.iter().map(|(j, m)| (*j, mat_to_rows(m))).collect(),
        }
    }

    pub fn to_plug_in(&self) -> Result<PlugIn, PlantFileError> {
        let id = self.subsystem.id;
        let child_couplings = self
            .child_couplings
            .iter()
            .map(|(j, rows)| {
                let m = mat_from_rows(rows, 0).ok_or_else(|| PlantFileError::Ragged {
                    id: *j,
                    what: format!("A_{{{j},{id}}}"),
                })?;
                Ok((*j, m))
            })
            .collect::<Result<_, PlantFileError>>()?;
        Ok(PlugIn {
            subsystem: self.subsystem.to_subsystem()?,
            child_couplings,
        })
    }

    pub fn read(path: &Path) -> Result<Self, PlantFileError> {
        let text = fs::read_to_string(path).map_err(|source| PlantFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(match Format::from_path(path) {
            Format::Json => serde_json::from_str(&text)?,
            Format::Toml => toml::from_str(&text)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), PlantFileError> {
        let text = match Format::from_path(path) {
            Format::Json => serde_json::to_string_pretty(self)? + "\n",
            Format::Toml => toml::to_string(self)?,
        };
        fs::write(path, text).map_err(|source| PlantFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Content hash of a graph, equal to the hash of the file it would be written as.
pub fn graph_hash(graph: &PlantGraph) -> String {
    PlantFile::from_graph(graph).content_hash()
}

pub fn read_graph(path: &Path) -> Result<PlantGraph, PlantFileError> {
    PlantFile::read(path)?.to_graph()
}

pub fn write_graph(graph: &PlantGraph, path: &Path) -> Result<(), PlantFileError> {
    PlantFile::from_graph(graph).write(path)
}
