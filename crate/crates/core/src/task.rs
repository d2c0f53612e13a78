//! Prediction targets shared by the manifest reader, the models and the
//! training loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One regression target. MOS is the quality score; the remaining five are
/// room-acoustics descriptors learned jointly in the MOSRA setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "MOS")]
    Mos,
    #[serde(rename = "SNR")]
    Snr,
    #[serde(rename = "STI")]
    Sti,
    #[serde(rename = "T60")]
    T60,
    #[serde(rename = "DRR")]
    Drr,
    #[serde(rename = "C50")]
    C50,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Mos, Task::Snr, Task::Sti, Task::T60, Task::Drr, Task::C50];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Mos => "MOS",
            Task::Snr => "SNR",
            Task::Sti => "STI",
            Task::T60 => "T60",
            Task::Drr => "DRR",
            Task::C50 => "C50",
        }
    }

    /// Column name in manifest files.
    pub fn column(self) -> &'static str {
        match self {
            Task::Mos => "mos",
            Task::Snr => "snr",
            Task::Sti => "sti",
            Task::T60 => "t60",
            Task::Drr => "drr",
            Task::C50 => "c50",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Task::Mos | Task::Sti => "",
            Task::Snr | Task::Drr | Task::C50 => "dB",
            Task::T60 => "s",
        }
    }

    fn check_range(self, value: f64) -> std::result::Result<(), String> {
        if !value.is_finite() {
            return Err(format!("{} label is not finite", self.name()));
        }
        let ok = match self {
            Task::Mos => (1.0..=5.0).contains(&value),
            Task::Sti => (0.0..=1.0).contains(&value),
            Task::T60 => value >= 0.0,
            Task::Snr | Task::Drr | Task::C50 => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{} label {value} out of range", self.name()))
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Argument(format!("unknown task `{s}`")))
    }
}

/// Parses `mos`, `all`/`mosra`, or a comma separated task list into
/// canonical order without duplicates.
pub fn parse_task_list(s: &str) -> Result<Vec<Task>> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("all") || s.eq_ignore_ascii_case("mosra") {
        return Ok(Task::ALL.to_vec());
    }
    let mut tasks = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(Task::from_str)
        .collect::<Result<Vec<_>>>()?;
    tasks.sort();
    tasks.dedup();
    if tasks.is_empty() {
        return Err(Error::Argument("empty task list".into()));
    }
    Ok(tasks)
}

/// Per-task optional labels in natural units (MOS 1-5, SNR/DRR/C50 dB,
/// STI 0-1, T60 s).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLabels {
    values: [Option<f64>; 6],
}

impl TaskLabels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, task: Task, value: f64) -> Self {
        self.values[task.index()] = Some(value);
        self
    }

    pub fn get(&self, task: Task) -> Option<f64> {
        self.values[task.index()]
    }

    pub fn set(&mut self, task: Task, value: Option<f64>) {
        self.values[task.index()] = value;
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(Option::is_none)
    }

    pub fn present(&self) -> impl Iterator<Item = (Task, f64)> + '_ {
        Task::ALL
            .into_iter()
            .filter_map(move |t| self.get(t).map(|v| (t, v)))
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.present().try_for_each(|(t, v)| t.check_range(v))
    }
}
