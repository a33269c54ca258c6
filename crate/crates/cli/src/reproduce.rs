//! Pinned figure and table targets shipped in `configs/`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use crate::output;

const TARGETS: &[(&str, &str)] = &[
    ("fig1", include_str!("../configs/fig1.json")),
    ("fig2", include_str!("../configs/fig2.json")),
    ("fig3", include_str!("../configs/fig3.json")),
    ("fig4", include_str!("../configs/fig4.json")),
    ("fig5", include_str!("../configs/fig5.json")),
    ("fig6", include_str!("../configs/fig6.json")),
    ("fig7", include_str!("../configs/fig7.json")),
    ("fig8", include_str!("../configs/fig8.json")),
    ("fig9", include_str!("../configs/fig9.json")),
    ("table1", include_str!("../configs/table1.json")),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Target {
    id: String,
    description: String,
    steps: Vec<Step>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Step {
    command: String,
    dir: String,
    config: serde_json::Value,
}

fn target(id: &str) -> Result<Target> {
    let Some((_, text)) = TARGETS.iter().find(|(k, _)| *k == id) else {
        let known: Vec<&str> = TARGETS.iter().map(|(k, _)| *k).collect();
        bail!("unknown reproduce target `{id}` (known: {})", known.join(", "));
    };
    let t: Target = serde_json::from_str(text).with_context(|| format!("pinned target {id}"))?;
    if t.id != id {
        bail!("pinned target file for {id} declares id {}", t.id);
    }
    Ok(t)
}

/// Runs every step of `id` under `<out>/<id>/<step dir>`.
pub fn run(id: &str, seed: Option<u64>, m: Option<u64>, out: Option<&Path>) -> Result<()> {
    let t = target(id)?;
    let base = match out {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(output::OUT_ENV) {
            Some(v) if !v.is_empty() => v.into(),
            _ => output::DEFAULT_OUT.into(),
        },
    }
    .join(&t.id);
    println!("{}: {}", t.id, t.description);
    for step in &t.steps {
        let mut cfg = crate::parse_config(&step.config.to_string(), &format!("{id}/{}", step.dir))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(m) = m {
            cfg.m = m;
        }
        let bad = cfg.violations();
        if let Some((f, msg)) = bad.first() {
            return Err(anyhow!("{id}/{}: {f}: {msg}", step.dir));
        }
        println!("[{}] {}", step.dir, step.command);
        crate::run_step(&step.command, &cfg, &base.join(&step.dir))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_targets_parse_and_validate() {
        for (id, _) in TARGETS {
            let t = target(id).unwrap();
            assert!(!t.steps.is_empty());
            for s in &t.steps {
                crate::parse_config(&s.config.to_string(), id).unwrap();
            }
        }
        assert!(target("fig10").is_err());
    }
}
