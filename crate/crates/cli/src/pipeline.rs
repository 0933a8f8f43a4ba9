//! Demo generation, segmentation, training and evaluation, plus the result
//! table and per-trial log formats.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gazebot_core::dataset::{Demonstration, SegmentAnnotation};
use gazebot_core::policy::{rollout, train, Policy, Preset, RolloutParams, TrainingData};
use gazebot_core::segmentation::{segment_dataset, DemoSegmentation, SegmentationConfig};
use gazebot_core::simenv::{scripted_expert, spawn, Condition, ExpertParams, ScenarioSpec};
use rayon::prelude::*;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SubGoal {
    Lifted,
    Pile,
}

impl SubGoal {
    pub const ALL: [SubGoal; 2] = [SubGoal::Lifted, SubGoal::Pile];

    pub fn as_str(self) -> &'static str {
        match self {
            SubGoal::Lifted => "Lifted",
            SubGoal::Pile => "Pile",
        }
    }

    pub fn parse(s: &str) -> Option<SubGoal> {
        SubGoal::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for SubGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub variant: Preset,
    pub condition: Condition,
    pub seed: u64,
    pub lifted: bool,
    pub pile: bool,
    pub finished: bool,
    pub bottleneck_error: Option<f64>,
    pub steps: usize,
}

impl TrialRecord {
    pub fn success(&self, goal: SubGoal) -> bool {
        match goal {
            SubGoal::Lifted => self.lifted,
            SubGoal::Pile => self.pile,
        }
    }

    /// One log line of `key=value` pairs.
    pub fn log_line(&self) -> String {
        let err = self.bottleneck_error.map(|e| format!("{e:.6}")).unwrap_or_else(|| "-".into());
        format!(
            "variant={} condition={} seed={} lifted={} pile={} finished={} bottleneck_error={} steps={}",
            self.variant, self.condition, self.seed, self.lifted, self.pile, self.finished, err, self.steps
        )
    }

    pub fn parse_log_line(line: &str) -> Result<TrialRecord> {
        let mut kv = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').with_context(|| format!("bad token `{tok}`"))?;
            if kv.insert(k, v).is_some() {
                bail!("duplicate key `{k}`");
            }
        }
        let get = |k: &str| kv.get(k).copied().with_context(|| format!("missing key `{k}`"));
        let flag = |k: &str| -> Result<bool> { get(k)?.parse().with_context(|| format!("bad `{k}`")) };
        let condition = get("condition")?;
        let err = get("bottleneck_error")?;
        if kv.len() != 8 {
            bail!("unexpected keys in `{line}`");
        }
        Ok(TrialRecord {
            variant: Preset::parse(get("variant")?)?,
            condition: Condition::parse(condition).with_context(|| format!("unknown condition `{condition}`"))?,
            seed: get("seed")?.parse().context("bad `seed`")?,
            lifted: flag("lifted")?,
            pile: flag("pile")?,
            finished: flag("finished")?,
            bottleneck_error: if err == "-" { None } else { Some(err.parse().context("bad `bottleneck_error`")?) },
            steps: get("steps")?.parse().context("bad `steps`")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultRow {
    pub variant: Preset,
    pub condition: Condition,
    pub subgoal: SubGoal,
    pub successes: usize,
    pub trials: usize,
}

impl ResultRow {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const RESULT_HEADER: [&str; 5] = ["variant", "condition", "subgoal", "successes", "trials"];

impl ResultTable {
    /// Counts successes per (variant, condition, sub-goal) in first-seen order.
    pub fn from_trials(trials: &[TrialRecord]) -> ResultTable {
        let mut keys: Vec<(Preset, Condition)> = Vec::new();
        for t in trials {
            if !keys.contains(&(t.variant, t.condition)) {
                keys.push((t.variant, t.condition));
            }
        }
        let mut rows = Vec::new();
        for (variant, condition) in keys {
            let group: Vec<_> = trials.iter().filter(|t| t.variant == variant && t.condition == condition).collect();
            for subgoal in SubGoal::ALL {
                rows.push(ResultRow {
                    variant,
                    condition,
                    subgoal,
                    successes: group.iter().filter(|t| t.success(subgoal)).count(),
                    trials: group.len(),
                });
            }
        }
        ResultTable { rows }
    }

    pub fn get(&self, variant: Preset, condition: Condition, subgoal: SubGoal) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.variant == variant && r.condition == condition && r.subgoal == subgoal)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(RESULT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.variant.as_str(),
                r.condition.as_str(),
                r.subgoal.as_str(),
                &r.successes.to_string(),
                &r.trials.to_string(),
            ])?;
        }
        Ok(w.into_inner()?)
    }

    pub fn from_csv(data: &[u8]) -> Result<ResultTable> {
        let mut r = csv::Reader::from_reader(data);
        if r.headers()?.iter().ne(RESULT_HEADER) {
            bail!("unexpected result table header");
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let condition = &rec[1];
            let row = ResultRow {
                variant: Preset::parse(&rec[0])?,
                condition: Condition::parse(condition)
                    .with_context(|| format!("line {line}: unknown condition `{condition}`"))?,
                subgoal: SubGoal::parse(&rec[2]).with_context(|| format!("line {line}: unknown sub-goal"))?,
                successes: rec[3].parse().with_context(|| format!("line {line}: bad successes"))?,
                trials: rec[4].parse().with_context(|| format!("line {line}: bad trials"))?,
            };
            rows.push(row);
        }
        Ok(ResultTable { rows })
    }
}

pub fn write_log(trials: &[TrialRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in trials {
        writeln!(out, "{}", t.log_line()).expect("write to Vec");
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<TrialRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| TrialRecord::parse_log_line(l).with_context(|| format!("trial log line {}", i + 1)))
        .collect()
}

/// Checks a table against the trial log it was built from.
pub fn lint_results(table: &ResultTable, trials: &[TrialRecord]) -> Vec<String> {
    let mut issues = Vec::new();
    for r in &table.rows {
        if r.successes > r.trials {
            issues.push(format!(
                "{} {} {}: {} successes exceed {} trials",
                r.variant, r.condition, r.subgoal, r.successes, r.trials
            ));
        }
    }
    let recount = ResultTable::from_trials(trials);
    for r in &recount.rows {
        match table.get(r.variant, r.condition, r.subgoal) {
            Some(t) if t == r => {}
            Some(t) => issues.push(format!(
                "{} {} {}: table says {}/{}, log recount gives {}/{}",
                r.variant, r.condition, r.subgoal, t.successes, t.trials, r.successes, r.trials
            )),
            None => issues.push(format!(
                "{} {} {}: present in the log but missing from the table",
                r.variant, r.condition, r.subgoal
            )),
        }
    }
    for t in &table.rows {
        if recount.get(t.variant, t.condition, t.subgoal).is_none() {
            issues.push(format!("{} {} {}: no trials in the log", t.variant, t.condition, t.subgoal));
        }
    }
    issues
}

/// Expert demonstrations for `seeds`, in seed order.
pub fn generate_demos(
    spec: &ScenarioSpec,
    condition: Condition,
    expert: &ExpertParams,
    seeds: std::ops::Range<u64>,
) -> Result<Vec<Demonstration>> {
    seeds
        .into_par_iter()
        .map(|seed| {
            let run = || -> Result<Demonstration> {
                let world = spawn(spec, condition, seed)?;
                Ok(scripted_expert(spec, world, expert, seed)?.0)
            };
            run().with_context(|| format!("stage gen-demos failed (seed {seed})"))
        })
        .collect()
}

pub fn segment(demos: &[Demonstration], cfg: &SegmentationConfig) -> Result<Vec<DemoSegmentation>> {
    segment_dataset(demos, cfg).context("stage segment failed")
}

/// Every preset evaluated on the same worlds: trial `i` of a condition uses
/// world seed `seed + i` for all presets.
pub fn evaluate(
    policies: &[Policy],
    spec: &ScenarioSpec,
    conditions: &[Condition],
    seed: u64,
    trials: usize,
    params: &RolloutParams,
) -> Result<Vec<TrialRecord>> {
    let mut jobs = Vec::new();
    for (pi, _) in policies.iter().enumerate() {
        for &c in conditions {
            for i in 0..trials as u64 {
                jobs.push((pi, c, seed + i));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(pi, condition, s)| {
            let policy = &policies[pi];
            let run = || -> Result<TrialRecord> {
                let world = spawn(spec, condition, s)?;
                let t = rollout(policy, spec, world, params, s)?;
                Ok(TrialRecord {
                    variant: policy.preset,
                    condition,
                    seed: s,
                    lifted: t.lifted,
                    pile: t.pile,
                    finished: t.finished,
                    bottleneck_error: t.bottleneck_error,
                    steps: t.steps,
                })
            };
            run().with_context(|| format!("stage eval failed ({} {condition}, seed {s})", policy.preset))
        })
        .collect()
}

/// Everything one `eval` run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultTable,
    pub trials: Vec<TrialRecord>,
    pub annotations: Vec<SegmentAnnotation>,
}

/// Generates demonstrations, segments them, trains every configured preset and
/// evaluates each on the shared trial seeds.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = cfg.scenario()?;
    let expert = cfg.expert();
    let demos = generate_demos(&spec, Condition::Id, &expert, cfg.demo_seed..cfg.demo_seed + cfg.demos as u64)?;
    let annotations: Vec<_> = segment(&demos, &cfg.segmentation())?.into_iter().map(|s| s.annotation).collect();
    let data = TrainingData { demos: &demos, annotations: &annotations, camera: &spec.camera };
    let params = cfg.policy_params();
    let policies = cfg
        .preset_list()?
        .into_iter()
        .map(|p| train(p, &params, &data).with_context(|| format!("stage train failed (preset {p})")))
        .collect::<Result<Vec<_>>>()?;
    let rollout_params = RolloutParams { max_steps: cfg.max_steps, expert };
    let trials = evaluate(&policies, &spec, &cfg.condition_list()?, cfg.seed, cfg.trials, &rollout_params)?;
    Ok(RunOutput { table: ResultTable::from_trials(&trials), trials, annotations })
}

/// Writes `results.csv` and `trials.log` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("results.csv"), out.table.to_csv()?)?;
    std::fs::write(dir.join("trials.log"), write_log(&out.trials))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(variant: Preset, seed: u64, lifted: bool, pile: bool) -> TrialRecord {
        TrialRecord {
            variant,
            condition: Condition::OodBoth,
            seed,
            lifted,
            pile,
            finished: pile,
            bottleneck_error: seed.is_multiple_of(2).then_some(0.0125),
            steps: 40 + seed as usize,
        }
    }

    #[test]
    fn log_lines_round_trip() {
        for r in [rec(Preset::Gazebot, 4, true, false), rec(Preset::Daa, 7, false, false)] {
            assert_eq!(TrialRecord::parse_log_line(&r.log_line()).unwrap(), r);
        }
        assert!(TrialRecord::parse_log_line("variant=gazebot").is_err());
    }

    #[test]
    fn table_counts_and_csv_round_trip() {
        let trials = vec![
            rec(Preset::Gazebot, 0, true, true),
            rec(Preset::Gazebot, 1, true, false),
            rec(Preset::Ablation4, 0, false, false),
            rec(Preset::Ablation4, 1, true, false),
        ];
        let t = ResultTable::from_trials(&trials);
        assert_eq!(t.rows.len(), 4);
        let g = t.get(Preset::Gazebot, Condition::OodBoth, SubGoal::Pile).unwrap();
        assert_eq!((g.successes, g.trials), (1, 2));
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with(b"variant,condition,subgoal,successes,trials\n"));
        assert_eq!(ResultTable::from_csv(&csv).unwrap(), t);
        assert!(lint_results(&t, &trials).is_empty());
    }

    #[test]
    fn linter_catches_miscounts() {
        let trials = vec![rec(Preset::Gazebot, 0, true, true)];
        let mut t = ResultTable::from_trials(&trials);
        t.rows[1].successes = 2;
        let issues = lint_results(&t, &trials);
        assert!(issues.iter().any(|i| i.contains("exceed")));
        assert!(issues.iter().any(|i| i.contains("recount")));
        assert!(!lint_results(&t, &[]).is_empty());
    }
}
