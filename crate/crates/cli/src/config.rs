//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use scg_core::guidance::{GuidanceConfig, LossFunction, QuadraticLoss, Selection, StepLoss};
use scg_core::schedule::ScheduleSpec;
use scg_core::Tensor;

/// Everything a command needs, as echoed to `<out>/config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    /// Mixture JSON (`.json`) or denoiser file.
    pub backend: Option<PathBuf>,
    /// Linear schedule for mixture backends; denoisers carry their own.
    pub schedule: Option<ScheduleSpec>,
    pub guidance: GuidanceConfig,
    /// Rule targets `{ph, nd, cp}` for piano-roll backends.
    pub rules: Option<PathBuf>,
    /// Loss for mixture backends: `quadratic:c[,c..]` or `step:threshold,penalty`.
    pub loss: Option<String>,
    pub seed: Option<u64>,
    pub num_samples: usize,
    pub out: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
    pub eta: Option<f64>,
    /// Stochastic DDIM subsequence length; plain DDPM when absent.
    pub steps: Option<usize>,
    pub source: Option<PathBuf>,
    /// `all`, `none`, `time:START:END` or `pitch:LOW:HIGH` (cells to regenerate).
    pub mask: Option<String>,
    pub noise_level: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            backend: None,
            schedule: None,
            guidance: GuidanceConfig::default(),
            rules: None,
            loss: None,
            seed: None,
            num_samples: 1,
            out: None,
            diagnostics: None,
            eta: None,
            steps: None,
            source: None,
            mask: None,
            noise_level: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("--seed is required for sampling commands")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        self.schedule.unwrap_or_default()
    }

    /// Writes the resolved config next to the outputs.
    pub fn echo(&self) -> Result<()> {
        let dir = self.out_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// `T,beta_1,beta_T`.
pub fn parse_schedule(s: &str) -> Result<ScheduleSpec> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [t, b1, bt] = parts.as_slice() else {
        bail!("schedule must be T,beta_1,beta_T, got {s:?}");
    };
    let spec = ScheduleSpec {
        steps: t.parse().with_context(|| format!("bad step count {t:?}"))?,
        beta_start: b1.parse().with_context(|| format!("bad beta_1 {b1:?}"))?,
        beta_end: bt.parse().with_context(|| format!("bad beta_T {bt:?}"))?,
        ..ScheduleSpec::default()
    };
    spec.build()?;
    Ok(spec)
}

/// `start:end`.
pub fn parse_window(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(':')
        .with_context(|| format!("guided window must be start:end, got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn parse_selection(s: &str) -> Result<Selection> {
    Ok(s.parse()?)
}

pub fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number {v:?}")))
        .collect()
}

/// Loss for a `dim`-dimensional mixture backend.
pub fn parse_gmm_loss(s: &str, dim: usize) -> Result<Box<dyn LossFunction>> {
    let (kind, args) = s
        .split_once(':')
        .with_context(|| format!("loss must be kind:args, got {s:?}"))?;
    let v = parse_floats(args)?;
    match kind {
        "quadratic" => {
            let center = match v.len() {
                1 => vec![v[0]; dim],
                n if n == dim => v,
                n => bail!("quadratic center has {n} values for a {dim}-dimensional backend"),
            };
            Ok(Box::new(QuadraticLoss::new(Tensor::vector(center))))
        }
        "step" => {
            let [threshold, penalty] = v.as_slice() else {
                bail!("step loss needs threshold,penalty");
            };
            Ok(Box::new(StepLoss::new(*threshold, *penalty)))
        }
        other => bail!("unknown loss kind {other:?}; expected quadratic or step"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        let s = parse_schedule("50,0.002,0.4").unwrap();
        assert_eq!((s.steps, s.beta_start, s.beta_end), (50, 0.002, 0.4));
        assert!(parse_schedule("50,0.002").is_err());
        assert_eq!(parse_window("750:0").unwrap(), (750, 0));
        assert!(parse_window("750").is_err());
        assert_eq!(
            parse_selection("softmax:2").unwrap(),
            Selection::Softmax { temperature: 2.0 }
        );
        assert!(parse_gmm_loss("quadratic:1,2", 3).is_err());
        let l = parse_gmm_loss("step:0,5", 1).unwrap();
        assert_eq!(l.loss(&Tensor::vector(vec![-1.0])).unwrap(), 5.0);
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig {
            seed: Some(3),
            num_samples: 4,
            ..RunConfig::default()
        };
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"guidance": {"n": 4}}"#).unwrap();
        assert_eq!(partial.guidance.n, 4);
        assert_eq!(partial.guidance.guide_start_t, 750);
    }
}
