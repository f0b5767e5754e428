use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::adapt::EpochLog;
use super::experiment::RunReport;
use crate::error::{Error, Result};

pub fn write_json_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One summary line per row. Timing is left out so that identical runs give
/// identical files.
pub fn write_csv_report(rows: &[RunReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["tag", "episodes", "mean", "ci95", "version", "config_hash"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.tag.clone(),
            r.episodes.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.ci95),
            r.version.clone(),
            r.config_hash.clone(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    tag: &'a str,
    episode: usize,
    #[serde(flatten)]
    log: &'a EpochLog,
}

/// JSON lines, one per `(row, episode, epoch)`.
pub fn write_trajectories(rows: &[RunReport], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        for (episode, traj) in r.trajectories.iter().enumerate() {
            for log in traj {
                serde_json::to_writer(&mut w, &TrajectoryLine { tag: &r.tag, episode, log })?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ExperimentConfig;

    fn report() -> RunReport {
        RunReport {
            tag: "IM".into(),
            episodes: 2,
            mean: 0.5,
            ci95: 0.1,
            accuracies: vec![0.4, 0.6],
            version: "0.1.0".into(),
            config_hash: "abc".into(),
            config: ExperimentConfig::default(),
            wall_time_secs: 1.25,
            trajectories: vec![
                vec![EpochLog {
                    epoch: 0,
                    l_s: 1.0,
                    l_src: 1.0,
                    l_im_support: 0.0,
                    l_q: None,
                    l_im_all: None,
                    l_dcl: None,
                    lambda_n: None,
                    logistic: None,
                    support_accuracy: 0.2,
                }],
                vec![],
            ],
        }
    }

    #[test]
    fn csv_has_no_timing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.csv");
        write_csv_report(&[report()], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "tag,episodes,mean,ci95,version,config_hash\nIM,2,0.500000,0.100000,0.1.0,abc\n"
        );
    }

    #[test]
    fn json_and_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("report.json");
        write_json_report(&report(), &j).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
        assert_eq!(v["tag"], "IM");
        assert_eq!(v["accuracies"][1], 0.6);
        let t = dir.path().join("trajectory.jsonl");
        write_trajectories(&[report()], &t).unwrap();
        let text = std::fs::read_to_string(&t).unwrap();
        assert_eq!(text.lines().count(), 1);
        let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(line["episode"], 0);
        assert_eq!(line["l_s"], 1.0);
    }
}
