//! Line-oriented `key = value` experiment files.
//!
//! ```text
//! # comments run to the end of the line
//! pl_mode = proto
//! kind    = kl_pq, kl_qp, js, mse   # a list: one cell per value
//! lambda  = 0, 1, 2                 # lists multiply into a grid
//! seeds   = 0..5
//! ```
//!
//! Every key may hold a comma-separated list (optionally in brackets).
//! The cells are the cartesian product of all lists, with keys varying
//! in file order, the last key fastest. `seed`/`seeds` are not grid axes;
//! every cell runs once per seed.

use std::str::FromStr;

use erda_lab::labeler::BaselineSelector;
use erda_lab::train::{Cell, PseudoLabelMode, TrainConfig};
use erda_lab::{DivergenceKind, ErdaConfig};

use crate::error::CliError;

/// Keys understood by [`parse_config`], besides `seed` and `seeds`.
pub const KEYS: [&str; 20] = [
    "kind",
    "lambda",
    "alpha",
    "pl_mode",
    "label_ratio",
    "steps",
    "lr",
    "batch",
    "include_labeled_in_pseudo",
    "scene.K",
    "scene.N",
    "scene.D",
    "scene.spread",
    "selector.mode",
    "selector.threshold",
    "selector.k",
    "query.dim",
    "query.heads",
    "proto.momentum",
    "proto.temperature",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SelectorMode {
    None,
    Threshold,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Setting {
    Kind(DivergenceKind),
    Lambda(f64),
    Alpha(f64),
    PlMode(PseudoLabelMode),
    LabelRatio(f64),
    Steps(usize),
    Lr(f64),
    Batch(usize),
    IncludeLabeled(bool),
    SceneK(usize),
    SceneN(usize),
    SceneD(usize),
    Spread(f64),
    Selector(SelectorMode),
    Threshold(f64),
    TopK(usize),
    QueryDim(usize),
    QueryHeads(usize),
    Momentum(f64),
    Temperature(f64),
}

fn number<T: FromStr>(raw: &str, what: &str) -> Result<T, String> {
    raw.parse().map_err(|_| format!("`{raw}` is not a valid {what}"))
}

fn parse_setting(key: &str, raw: &str) -> Result<Setting, String> {
    let real = |r| number::<f64>(r, "number");
    let count = |r| number::<usize>(r, "non-negative integer");
    Ok(match key {
        "kind" => Setting::Kind(raw.parse().map_err(|e| format!("{e}"))?),
        "lambda" => Setting::Lambda(real(raw)?),
        "alpha" => Setting::Alpha(real(raw)?),
        "pl_mode" => Setting::PlMode(raw.parse().map_err(|e| format!("{e}"))?),
        "label_ratio" => Setting::LabelRatio(real(raw)?),
        "steps" => Setting::Steps(count(raw)?),
        "lr" => Setting::Lr(real(raw)?),
        "batch" => Setting::Batch(count(raw)?),
        "include_labeled_in_pseudo" => Setting::IncludeLabeled(number(raw, "boolean (true/false)")?),
        "scene.K" => Setting::SceneK(count(raw)?),
        "scene.N" => Setting::SceneN(count(raw)?),
        "scene.D" => Setting::SceneD(count(raw)?),
        "scene.spread" => Setting::Spread(real(raw)?),
        "selector.mode" => Setting::Selector(match raw {
            "none" => SelectorMode::None,
            "threshold" => SelectorMode::Threshold,
            "topk" | "top_k" => SelectorMode::TopK,
            other => return Err(format!("unknown selector mode `{other}` (none, threshold, topk)")),
        }),
        "selector.threshold" => Setting::Threshold(real(raw)?),
        "selector.k" => Setting::TopK(count(raw)?),
        "query.dim" => Setting::QueryDim(count(raw)?),
        "query.heads" => Setting::QueryHeads(count(raw)?),
        "proto.momentum" => Setting::Momentum(real(raw)?),
        "proto.temperature" => Setting::Temperature(real(raw)?),
        _ => unreachable!("key checked against KEYS"),
    })
}

/// One grid axis: a key, its values and where it was written.
#[derive(Debug, Clone)]
struct Axis {
    key: String,
    line: usize,
    values: Vec<(String, Setting)>,
}

/// A parsed experiment file: the grid cells and the seeds each runs with.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
}

fn split_values(raw: &str) -> Vec<String> {
    let inner = raw
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .unwrap_or(raw);
    inner.split(',').map(|v| v.trim().to_string()).collect()
}

fn parse_seeds(values: &[String], line: usize) -> Result<Vec<u64>, CliError> {
    let err = |message: String| CliError::Config { line, message };
    let mut seeds = Vec::new();
    for v in values {
        if let Some((a, b)) = v.split_once("..") {
            let a: u64 = number(a.trim(), "seed").map_err(err)?;
            let b: u64 = number(b.trim(), "seed").map_err(err)?;
            if a >= b {
                return Err(err(format!("empty seed range `{v}`")));
            }
            seeds.extend(a..b);
        } else {
            seeds.push(number(v, "seed").map_err(err)?);
        }
    }
    Ok(seeds)
}

/// Parses an experiment file into validated cells.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, CliError> {
    let mut axes: Vec<Axis> = Vec::new();
    let mut seeds: Option<(usize, Vec<u64>)> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(CliError::Config {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            });
        };
        let key = key.trim();
        let values = split_values(value.trim());
        if values.iter().any(String::is_empty) {
            return Err(CliError::Config {
                line,
                message: format!("empty value for `{key}`"),
            });
        }
        if key == "seed" || key == "seeds" {
            if let Some((first, _)) = seeds {
                return Err(CliError::Config {
                    line,
                    message: format!("seeds already given on line {first}"),
                });
            }
            seeds = Some((line, parse_seeds(&values, line)?));
            continue;
        }
        if !KEYS.contains(&key) {
            return Err(CliError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if let Some(prev) = axes.iter().find(|a| a.key == key) {
            return Err(CliError::Config {
                line,
                message: format!("`{key}` already set on line {}", prev.line),
            });
        }
        let parsed = values
            .into_iter()
            .map(|v| {
                parse_setting(key, &v)
                    .map(|s| (v, s))
                    .map_err(|message| CliError::Config {
                        line,
                        message: format!("{key}: {message}"),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        axes.push(Axis {
            key: key.to_string(),
            line,
            values: parsed,
        });
    }

    let cells = expand(&axes)?;
    let seeds = seeds.map_or_else(|| vec![0], |(_, s)| s);
    Ok(ExperimentSpec { cells, seeds })
}

/// Cartesian product of the axes, validated cell by cell.
fn expand(axes: &[Axis]) -> Result<Vec<Cell>, CliError> {
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut cells = Vec::with_capacity(total);
    for index in 0..total {
        // Mixed-radix digits, last axis fastest.
        let mut n = index;
        let mut pick = vec![0; axes.len()];
        for (a, axis) in axes.iter().enumerate().rev() {
            pick[a] = n % axis.values.len();
            n /= axis.values.len();
        }
        let chosen: Vec<(&Axis, &(String, Setting))> = axes
            .iter()
            .zip(&pick)
            .map(|(axis, &i)| (axis, &axis.values[i]))
            .collect();
        let id = chosen
            .iter()
            .filter(|(axis, _)| axis.values.len() > 1)
            .map(|(axis, (raw, _))| format!("{}={raw}", axis.key))
            .collect::<Vec<_>>()
            .join(";");
        let id = if id.is_empty() { "base".to_string() } else { id };
        let config = build(&chosen).map_err(|(line, message)| {
            let message = format!("cell `{id}`: {message}");
            match line {
                Some(line) => CliError::Config { line, message },
                None => CliError::Usage(message),
            }
        })?;
        cells.push(Cell::new(id, config));
    }
    Ok(cells)
}

/// Applies settings over the defaults. Errors carry the line most
/// relevant to the problem, if a single line is to blame.
fn build(chosen: &[(&Axis, &(String, Setting))]) -> Result<TrainConfig, (Option<usize>, String)> {
    let mut cfg = TrainConfig::default();
    let mut selector = None;
    let mut threshold = None;
    let mut top_k = None;
    let line_of = |key: &str| chosen.iter().find(|(a, _)| a.key == key).map(|(a, _)| a.line);

    for (_, (_, setting)) in chosen {
        match *setting {
            Setting::Kind(k) => cfg.erda.kind = k,
            Setting::Lambda(v) => cfg.erda.lambda = v,
            Setting::Alpha(v) => cfg.erda.alpha = v,
            Setting::PlMode(m) => cfg.pl_mode = m,
            Setting::LabelRatio(v) => cfg.scene.label_ratio = v,
            Setting::Steps(v) => cfg.steps = v,
            Setting::Lr(v) => cfg.lr = v,
            Setting::Batch(v) => cfg.batch = v,
            Setting::IncludeLabeled(v) => cfg.include_labeled_in_pseudo = v,
            Setting::SceneK(v) => cfg.scene.num_classes = v,
            Setting::SceneN(v) => cfg.scene.num_points = v,
            Setting::SceneD(v) => cfg.scene.dim = v,
            Setting::Spread(v) => cfg.scene.spread = v,
            Setting::Selector(m) => selector = Some(m),
            Setting::Threshold(v) => threshold = Some(v),
            Setting::TopK(v) => top_k = Some(v),
            Setting::QueryDim(v) => cfg.proj_dim = v,
            Setting::QueryHeads(v) => cfg.heads = v,
            Setting::Momentum(v) => cfg.momentum = v,
            Setting::Temperature(v) => cfg.temperature = v,
        }
    }

    cfg.selector = match selector {
        None | Some(SelectorMode::None) => {
            for (key, set) in [("selector.threshold", threshold.is_some()), ("selector.k", top_k.is_some())] {
                if set {
                    return Err((line_of(key), format!("{key} needs a matching selector.mode")));
                }
            }
            None
        }
        Some(SelectorMode::Threshold) => {
            if top_k.is_some() {
                return Err((line_of("selector.k"), "selector.k is only used with selector.mode = topk".into()));
            }
            Some(BaselineSelector::Threshold(threshold.ok_or_else(|| {
                (line_of("selector.mode"), "selector.mode = threshold needs selector.threshold".to_string())
            })?))
        }
        Some(SelectorMode::TopK) => {
            if threshold.is_some() {
                return Err((
                    line_of("selector.threshold"),
                    "selector.threshold is only used with selector.mode = threshold".into(),
                ));
            }
            Some(BaselineSelector::TopK(top_k.ok_or_else(|| {
                (line_of("selector.mode"), "selector.mode = topk needs selector.k".to_string())
            })?))
        }
    };

    ErdaConfig::new(cfg.erda.kind, cfg.erda.lambda, cfg.erda.alpha).map_err(|e| {
        let line = if cfg.erda.lambda < 0.0 || cfg.erda.lambda.is_nan() {
            line_of("lambda")
        } else {
            line_of("alpha")
        };
        (line, e.to_string())
    })?;
    cfg.validate().map_err(|e| (None, e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_one_default_cell() {
        let spec = parse_config("# nothing here\n\n").unwrap();
        assert_eq!(spec.seeds, vec![0]);
        assert_eq!(spec.cells.len(), 1);
        assert_eq!(spec.cells[0].id, "base");
        assert_eq!(spec.cells[0].config, TrainConfig::default());
    }

    #[test]
    fn lists_form_a_grid() {
        let spec = parse_config("kind = kl_pq, kl_qp, js, mse\nlambda = [0, 1, 2]\nseeds = 0..5\n").unwrap();
        assert_eq!(spec.cells.len(), 12);
        assert_eq!(spec.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(spec.cells[0].id, "kind=kl_pq;lambda=0");
        assert_eq!(spec.cells[1].id, "kind=kl_pq;lambda=1");
        assert_eq!(spec.cells[11].id, "kind=mse;lambda=2");
        assert_eq!(spec.cells[11].config.erda.kind, DivergenceKind::Mse);
        assert_eq!(spec.cells[11].config.erda.lambda, 2.0);
    }

    #[test]
    fn nested_keys_reach_the_config() {
        let text = "pl_mode = baseline_onehot\nselector.mode = threshold\nselector.threshold = 0.9\n\
                    scene.K = 4\nscene.N = 400\nscene.D = 2\nscene.spread = 0.3\nlabel_ratio = 0.05\n\
                    proto.momentum = 0.5\nproto.temperature = 0.2\nquery.dim = 16\nquery.heads = 4\n\
                    steps = 7\nlr = 0.01\nbatch = 32\nalpha = 0.3\ninclude_labeled_in_pseudo = true\nseed = 9\n";
        let spec = parse_config(text).unwrap();
        let c = &spec.cells[0].config;
        assert_eq!(spec.seeds, vec![9]);
        assert_eq!(c.pl_mode, PseudoLabelMode::BaselineOneHot);
        assert_eq!(c.selector, Some(BaselineSelector::Threshold(0.9)));
        assert_eq!((c.scene.num_classes, c.scene.num_points, c.scene.dim), (4, 400, 2));
        assert_eq!((c.scene.spread, c.scene.label_ratio), (0.3, 0.05));
        assert_eq!((c.momentum, c.temperature), (0.5, 0.2));
        assert_eq!((c.proj_dim, c.heads), (16, 4));
        assert_eq!((c.steps, c.lr, c.batch, c.erda.alpha), (7, 0.01, 32, 0.3));
        assert!(c.include_labeled_in_pseudo);
    }

    #[test]
    fn unknown_keys_are_named_with_their_line() {
        let err = parse_config("kind = js\n\nlamda = 1\n").unwrap_err();
        assert!(matches!(err, CliError::UnknownKey { line: 3, ref key } if key == "lamda"), "{err}");
        assert_eq!(err.to_string(), "line 3: unknown key `lamda`");
    }

    #[test]
    fn bad_values_report_their_line() {
        for (text, line) in [
            ("steps = ten\n", 1),
            ("# c\nkind = hellinger\n", 2),
            ("lambda = 1\nlambda = 2\n", 2),
            ("just words\n", 1),
            ("lambda = -1\n", 1),
            ("selector.mode = threshold\n", 1),
            ("lambda = 1,\n", 1),
            ("seeds = 5..5\n", 1),
        ] {
            match parse_config(text) {
                Err(CliError::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn top_k_selector_with_erda() {
        let spec = parse_config("selector.mode = topk\nselector.k = 5\n").unwrap();
        assert_eq!(spec.cells[0].config.selector, Some(BaselineSelector::TopK(5)));
        assert_eq!(spec.cells[0].config.pl_mode, PseudoLabelMode::Proto);
    }

    #[test]
    fn inconsistent_cells_are_rejected() {
        let err = parse_config("pl_mode = none, baseline_onehot\n").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err:?}");
        assert!(err.to_string().contains("pl_mode=baseline_onehot"), "{err}");
    }

    #[test]
    fn comments_and_spacing_are_ignored() {
        let a = parse_config("lambda=2#x\n   kind   =   js   \n").unwrap();
        let b = parse_config("lambda = 2\nkind = js\n").unwrap();
        assert_eq!(a, b);
    }
}
