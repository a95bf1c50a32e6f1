//! Directory-backed store of mixtures, surrogates, rates and ground-truth
//! specs. Everything is revalidated on load and surrogate → rate hash links
//! are enforced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::MixtureModel;
use crate::groundtruth::GroundTruthSpec;
use crate::rates::RateSchedule;
use crate::scenario::ModelSet;
use crate::session::Segment;
use crate::surrogate::{SurrogateKind, SurrogateModel};

pub const MIXTURES: &str = "mixtures";
pub const SURROGATES: &str = "surrogates";
pub const RATES: &str = "rates";
pub const GROUND_TRUTH: &str = "ground_truth";

#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    root: PathBuf,
    mixtures: BTreeMap<String, MixtureModel>,
    surrogates: BTreeMap<String, SurrogateModel>,
    rates: BTreeMap<String, RateSchedule>,
    ground_truth: BTreeMap<String, GroundTruthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub id: String,
    pub segment: Option<Segment>,
    pub n_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEntry {
    pub id: String,
    pub kind: SurrogateKind,
    pub dt: u32,
    pub rate_name: String,
    pub test_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub mixtures: Vec<MixtureEntry>,
    pub surrogates: Vec<SurrogateEntry>,
    pub rates: Vec<String>,
    pub ground_truth: Vec<String>,
}

fn json_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            "id",
            format!("`{id}` is not a valid artifact id"),
        ))
    }
}

impl ModelRegistry {
    /// Loads every artifact under `root`. A missing root is an empty registry.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mut reg = ModelRegistry {
            root: root.clone(),
            ..Default::default()
        };
        for (id, path) in json_files(&root.join(RATES))? {
            reg.rates.insert(id, RateSchedule::load(&path)?);
        }
        for (id, path) in json_files(&root.join(MIXTURES))? {
            reg.mixtures.insert(id, MixtureModel::load(&path)?);
        }
        for (id, path) in json_files(&root.join(GROUND_TRUTH))? {
            reg.ground_truth.insert(id, GroundTruthSpec::load(&path)?);
        }
        for (id, path) in json_files(&root.join(SURROGATES))? {
            let m = SurrogateModel::load(&path)?;
            reg.check_rate_link(&id, &m)?;
            reg.surrogates.insert(id, m);
        }
        Ok(reg)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The surrogate's recorded rate hash must match the stored rate of the
    /// same name.
    fn check_rate_link(&self, id: &str, m: &SurrogateModel) -> Result<()> {
        let p = &m.provenance;
        match self.rates.get(&p.rate_name) {
            Some(rate) => {
                let found = rate.content_hash();
                if found != p.rate_sha256 {
                    return Err(Error::HashMismatch {
                        what: format!("rate `{}` of surrogate `{id}`", p.rate_name),
                        recorded: p.rate_sha256.clone(),
                        found,
                    });
                }
            }
            None => warn!(
                "surrogate `{id}` refers to rate `{}` not in the registry",
                p.rate_name
            ),
        }
        Ok(())
    }

    pub fn listing(&self) -> Listing {
        Listing {
            mixtures: self
                .mixtures
                .iter()
                .map(|(id, m)| MixtureEntry {
                    id: id.clone(),
                    segment: m.segment,
                    n_components: m.g(),
                })
                .collect(),
            surrogates: self
                .surrogates
                .iter()
                .map(|(id, m)| SurrogateEntry {
                    id: id.clone(),
                    kind: m.kind,
                    dt: m.dt,
                    rate_name: m.provenance.rate_name.clone(),
                    test_rmse: m.scores.test_rmse,
                })
                .collect(),
            rates: self.rates.keys().cloned().collect(),
            ground_truth: self.ground_truth.keys().cloned().collect(),
        }
    }

    pub fn mixture(&self, id: &str) -> Option<&MixtureModel> {
        self.mixtures.get(id)
    }

    pub fn surrogate(&self, id: &str) -> Option<&SurrogateModel> {
        self.surrogates.get(id)
    }

    pub fn surrogates(&self) -> &BTreeMap<String, SurrogateModel> {
        &self.surrogates
    }

    pub fn rate(&self, name: &str) -> Option<&RateSchedule> {
        self.rates.get(name)
    }

    pub fn rates(&self) -> &BTreeMap<String, RateSchedule> {
        &self.rates
    }

    pub fn ground_truth(&self, id: &str) -> Option<&GroundTruthSpec> {
        self.ground_truth.get(id)
    }

    /// Mixtures keyed by their segment; later ids win on duplicates.
    pub fn model_set(&self) -> Result<ModelSet> {
        let mut set = ModelSet::new();
        for (id, m) in &self.mixtures {
            if m.segment.is_none() {
                warn!("mixture `{id}` has no segment and is skipped");
                continue;
            }
            set.insert(m.clone())?;
        }
        Ok(set)
    }

    fn write(&self, dir: &str, id: &str, text: String) -> Result<PathBuf> {
        check_id(id)?;
        let d = self.root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let path = d.join(format!("{id}.json"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn put_rate(&mut self, rate: RateSchedule) -> Result<PathBuf> {
        rate.validate()?;
        let path = self.write(RATES, &rate.name, rate.to_json())?;
        self.rates.insert(rate.name.clone(), rate);
        Ok(path)
    }

    pub fn put_mixture(&mut self, id: &str, model: MixtureModel) -> Result<PathBuf> {
        model.validate()?;
        let path = self.write(MIXTURES, id, model.to_json())?;
        self.mixtures.insert(id.to_string(), model);
        Ok(path)
    }

    pub fn put_surrogate(&mut self, id: &str, model: SurrogateModel) -> Result<PathBuf> {
        model.validate()?;
        self.check_rate_link(id, &model)?;
        let path = self.write(SURROGATES, id, model.to_json())?;
        self.surrogates.insert(id.to_string(), model);
        Ok(path)
    }

    pub fn put_ground_truth(&mut self, id: &str, spec: GroundTruthSpec) -> Result<PathBuf> {
        spec.validate()?;
        let path = self.write(GROUND_TRUTH, id, spec.to_json())?;
        self.ground_truth.insert(id.to_string(), spec);
        Ok(path)
    }
}
