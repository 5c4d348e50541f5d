//! Contest-local rating estimates from standings.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub const SEARCH_LO: f64 = -500.0;
pub const SEARCH_HI: f64 = 5000.0;
pub const MAX_ITERATIONS: usize = 200;
pub const WIDTH_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RatingError {
    #[error("rank {m} outside 1..={max}")]
    RankOutOfRange { m: usize, max: usize },
    #[error("rating {0} is not finite")]
    NonFinite(f64),
    #[error("no estimates given")]
    Empty,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandingTuple {
    pub solved: u32,
    pub penalty: f64,
    pub last_ac: f64,
}

impl StandingTuple {
    /// Standing order: more solves, then lower penalty, then earlier last AC.
    /// `Greater` means `self` ranks higher.
    pub fn standing_cmp(&self, other: &Self) -> Ordering {
        self.solved
            .cmp(&other.solved)
            .then(other.penalty.total_cmp(&self.penalty))
            .then(other.last_ac.total_cmp(&self.last_ac))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Human {
    pub rating: f64,
    pub standing: StandingTuple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestStandings {
    pub contest_id: String,
    pub humans: Vec<Human>,
    pub agent: StandingTuple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertedRank {
    pub m: usize,
    /// Some human's tuple equals the agent's exactly; that human ranks above.
    pub exact_tie: bool,
}

pub fn insert_rank(standings: &ContestStandings) -> InsertedRank {
    if standings.humans.is_empty() {
        log::warn!("contest {} has no rated humans; rank defaults to 1", standings.contest_id);
    }
    let mut above = 0;
    let mut exact_tie = false;
    for h in &standings.humans {
        match h.standing.standing_cmp(&standings.agent) {
            Ordering::Greater => above += 1,
            Ordering::Equal => {
                above += 1;
                exact_tie = true;
            }
            Ordering::Less => {}
        }
    }
    InsertedRank { m: above + 1, exact_tie }
}

/// Expected number of humans outperforming a player rated `r`.
pub fn expected_above(r: f64, ratings: &[f64]) -> f64 {
    ratings.iter().map(|&ri| 1.0 / (1.0 + 10f64.powf((r - ri) / 400.0))).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saturation {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingEstimate {
    pub rating: f64,
    /// |m − 1 − expected_above(rating)|.
    pub residual: f64,
    pub iterations: usize,
    pub saturation: Option<Saturation>,
}

/// Solve m − 1 = Σ 1/(1 + 10^((r − R_i)/400)) by bisection on [−500, 5000].
pub fn invert_rating(m: usize, ratings: &[f64]) -> Result<RatingEstimate, RatingError> {
    let n = ratings.len();
    if m == 0 || m > n + 1 {
        return Err(RatingError::RankOutOfRange { m, max: n + 1 });
    }
    if let Some(&bad) = ratings.iter().find(|r| !r.is_finite()) {
        return Err(RatingError::NonFinite(bad));
    }
    let target = (m - 1) as f64;
    let f = |r: f64| expected_above(r, ratings) - target;
    let saturated = |rating: f64, side| RatingEstimate {
        rating,
        residual: f(rating).abs(),
        iterations: 0,
        saturation: Some(side),
    };
    // The expectation only approaches 0 and n asymptotically.
    if m == 1 {
        return Ok(saturated(SEARCH_HI, Saturation::Upper));
    }
    if m == n + 1 {
        return Ok(saturated(SEARCH_LO, Saturation::Lower));
    }
    let (mut lo, mut hi) = (SEARCH_LO, SEARCH_HI);
    if f(lo) < 0.0 {
        return Ok(saturated(lo, Saturation::Lower));
    }
    if f(hi) > 0.0 {
        return Ok(saturated(hi, Saturation::Upper));
    }
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && hi - lo >= WIDTH_TOLERANCE {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rating = 0.5 * (lo + hi);
    Ok(RatingEstimate {
        rating,
        residual: f(rating).abs(),
        iterations,
        saturation: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub running_means: Vec<f64>,
    pub final_mean: f64,
    /// Absent for a single contest.
    pub standard_error: Option<f64>,
}

pub fn trajectory(estimates: &[f64]) -> Result<Trajectory, RatingError> {
    if estimates.is_empty() {
        return Err(RatingError::Empty);
    }
    let mut running_means = Vec::with_capacity(estimates.len());
    let mut sum = 0.0;
    for (t, r) in estimates.iter().enumerate() {
        sum += r;
        running_means.push(sum / (t + 1) as f64);
    }
    let k = estimates.len() as f64;
    let mean = sum / k;
    let standard_error = (estimates.len() > 1).then(|| {
        let ss: f64 = estimates.iter().map(|r| (r - mean).powi(2)).sum();
        (ss / (k * (k - 1.0))).sqrt()
    });
    Ok(Trajectory {
        running_means,
        final_mean: mean,
        standard_error,
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, RatingError> {
    s.parse().map_err(|_| RatingError::Parse {
        line,
        reason: format!("bad number `{s}`"),
    })
}

/// Rows of `rating solved penalty last_ac`; `#` starts a comment.
/// Rows whose rating is `-` (unrated) are skipped.
pub fn parse_humans(text: &str) -> Result<Vec<Human>, RatingError> {
    let mut out = Vec::new();
    for (line, cols) in data_lines(text) {
        if cols.len() != 4 {
            return Err(RatingError::Parse {
                line,
                reason: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        if cols[0] == "-" {
            continue;
        }
        out.push(Human {
            rating: num(line, cols[0])?,
            standing: StandingTuple {
                solved: num(line, cols[1])?,
                penalty: num(line, cols[2])?,
                last_ac: num(line, cols[3])?,
            },
        });
    }
    Ok(out)
}

/// Rows of `contest_id solved penalty last_ac`, in contest order.
pub fn parse_agent(text: &str) -> Result<Vec<(String, StandingTuple)>, RatingError> {
    let mut out = Vec::new();
    for (line, cols) in data_lines(text) {
        if cols.len() != 4 {
            return Err(RatingError::Parse {
                line,
                reason: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        out.push((
            cols[0].to_string(),
            StandingTuple {
                solved: num(line, cols[1])?,
                penalty: num(line, cols[2])?,
                last_ac: num(line, cols[3])?,
            },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestRow {
    pub contest_id: String,
    pub humans: usize,
    pub rank: InsertedRank,
    pub estimate: RatingEstimate,
    pub running_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReport {
    pub rows: Vec<ContestRow>,
    pub trajectory: Trajectory,
}

/// Estimate every contest in order and aggregate.
pub fn rate_contests(contests: &[ContestStandings]) -> Result<RatingReport, RatingError> {
    let mut rows = Vec::with_capacity(contests.len());
    for c in contests {
        let rank = insert_rank(c);
        let ratings: Vec<f64> = c.humans.iter().map(|h| h.rating).collect();
        let estimate = invert_rating(rank.m, &ratings)?;
        rows.push(ContestRow {
            contest_id: c.contest_id.clone(),
            humans: ratings.len(),
            rank,
            estimate,
            running_mean: 0.0,
        });
    }
    let est: Vec<f64> = rows.iter().map(|r| r.estimate.rating).collect();
    let trajectory = trajectory(&est)?;
    for (row, m) in rows.iter_mut().zip(&trajectory.running_means) {
        row.running_mean = *m;
    }
    Ok(RatingReport { rows, trajectory })
}

/// Tab-separated trajectory table.
pub fn render_report(report: &RatingReport) -> String {
    let mut out = String::from("contest\thumans\trank\testimate\trunning_mean\tflags\n");
    for r in &report.rows {
        let mut flags = Vec::new();
        if r.rank.exact_tie {
            flags.push("tie");
        }
        match r.estimate.saturation {
            Some(Saturation::Upper) => flags.push("saturated_hi"),
            Some(Saturation::Lower) => flags.push("saturated_lo"),
            None => {}
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.2}\t{:.2}\t{}\n",
            r.contest_id,
            r.humans,
            r.rank.m,
            r.estimate.rating,
            r.running_mean,
            if flags.is_empty() { "-".to_string() } else { flags.join(",") }
        ));
    }
    match report.trajectory.standard_error {
        Some(se) => out.push_str(&format!("final\t{:.2}\tse\t{:.2}\n", report.trajectory.final_mean, se)),
        None => out.push_str(&format!("final\t{:.2}\tse\t-\n", report.trajectory.final_mean)),
    }
    out
}
