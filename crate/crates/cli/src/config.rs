use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use deid_core::orchestrator::{ScalePolicy, ScriptRefs, BUILTIN_SCRIPT};

/// Settings shared by several subcommands. Every field is optional in the
/// file and overridable by the matching flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub filter: Option<PathBuf>,
    pub scrub: Option<PathBuf>,
    pub anon: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub mapping_store: Option<PathBuf>,
    pub exclusions: Option<PathBuf>,
    pub spool: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub scale: ScaleSection,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSection {
    pub min_workers: Option<usize>,
    pub max_workers: Option<usize>,
    pub window: Option<f64>,
    pub rate: Option<f64>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<()> {
        for (what, p) in [
            ("filter script", &self.filter),
            ("scrub script", &self.scrub),
            ("anonymizer script", &self.anon),
            ("input", &self.input),
            ("exclusion list", &self.exclusions),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{what} {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<ScalePolicy> {
        let d = ScalePolicy::default();
        let p = ScalePolicy {
            per_worker_rate: self.scale.rate,
            delivery_window: self.scale.window.unwrap_or(d.delivery_window),
            min_workers: self.scale.min_workers.unwrap_or(d.min_workers),
            max_workers: self.scale.max_workers.unwrap_or(d.max_workers),
        };
        p.validate().map_err(anyhow::Error::msg)?;
        Ok(p)
    }

    pub fn script_refs(&self) -> ScriptRefs {
        let r = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| BUILTIN_SCRIPT.to_string())
        };
        ScriptRefs {
            filter: r(&self.filter),
            scrub: r(&self.scrub),
            anon: r(&self.anon),
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match value {
            Some(p) => Ok(p),
            None => bail!("{flag} is required (flag or config file)"),
        }
    }
}

/// `key=value`
pub fn parse_param(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    if k.trim().is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.trim().to_string(), v.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deid.toml");
        std::fs::write(
            &path,
            "seed = 7\n[scale]\nmax_workers = 3\nwindow = 60\n[params]\naccession = \"ACN1\"\n",
        )
        .unwrap();
        let cfg = Config::load(Some(&path)).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.params["accession"], "ACN1");
        let p = cfg.policy().unwrap();
        assert_eq!((p.max_workers, p.delivery_window), (3, 60.0));
        assert_eq!(cfg.script_refs(), ScriptRefs::default());
    }

    #[test]
    fn rejects_missing_paths_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deid.toml");
        std::fs::write(&path, "filter = \"/no/such/file\"\n").unwrap();
        assert!(Config::load(Some(&path)).is_err());
        std::fs::write(&path, "filtre = \"x\"\n").unwrap();
        assert!(Config::load(Some(&path)).is_err());
    }

    #[test]
    fn params() {
        assert_eq!(parse_param("a=b=c").unwrap(), ("a".into(), "b=c".into()));
        assert!(parse_param("nokey").is_err());
        assert!(parse_param("=v").is_err());
    }
}
