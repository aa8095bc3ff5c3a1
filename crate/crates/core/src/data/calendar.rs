//! Calendar file: one row per day with week key, events and SNAP flags.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use super::sales::csv_err;
use crate::error::{Error, Result};

/// Event classes of the calendar file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    Sporting,
    Cultural,
    National,
    Religious,
}

impl EventType {
    pub const ALL: [EventType; 4] = [
        EventType::Sporting,
        EventType::Cultural,
        EventType::National,
        EventType::Religious,
    ];

    /// 1..=4; 0 is reserved for "no event".
    pub fn code(self) -> u8 {
        match self {
            EventType::Sporting => 1,
            EventType::Cultural => 2,
            EventType::National => 3,
            EventType::Religious => 4,
        }
    }
}

impl FromStr for EventType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Sporting" => Ok(EventType::Sporting),
            "Cultural" => Ok(EventType::Cultural),
            "National" => Ok(EventType::National),
            "Religious" => Ok(EventType::Religious),
            other => Err(format!("unknown event type `{other}`")),
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventType::Sporting => "Sporting",
            EventType::Cultural => "Cultural",
            EventType::National => "National",
            EventType::Religious => "Religious",
        };
        f.write_str(s)
    }
}

/// States carrying a SNAP column, in file order.
pub const SNAP_STATES: [&str; 3] = ["CA", "TX", "WI"];

#[derive(Debug, Clone, PartialEq)]
pub struct CalendarRow {
    pub date: NaiveDate,
    /// 1-based day ordinal (`d_<n>`).
    pub d_index: usize,
    pub wm_yr_wk: u32,
    pub weekday: String,
    /// 1..=7, Saturday = 1 as in the M5 files.
    pub wday: u8,
    pub month: u8,
    pub year: i32,
    pub event_name_1: Option<String>,
    pub event_type_1: Option<EventType>,
    pub event_name_2: Option<String>,
    pub event_type_2: Option<EventType>,
    /// SNAP flags for CA, TX, WI.
    pub snap: [u8; 3],
}

impl CalendarRow {
    /// SNAP flag for a state id; states without a SNAP column read 0.
    pub fn snap_for(&self, state_id: &str) -> u8 {
        SNAP_STATES
            .iter()
            .position(|s| *s == state_id)
            .map_or(0, |i| self.snap[i])
    }
}

const COLUMNS: [&str; 14] = [
    "date",
    "wm_yr_wk",
    "weekday",
    "wday",
    "month",
    "year",
    "d",
    "event_name_1",
    "event_type_1",
    "event_name_2",
    "event_type_2",
    "snap_CA",
    "snap_TX",
    "snap_WI",
];

pub fn load_calendar(path: impl AsRef<Path>) -> Result<Vec<CalendarRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_calendar(file, &path.display().to_string())
}

pub fn parse_calendar<R: Read>(reader: R, name: &str) -> Result<Vec<CalendarRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| perr(name, 1, e))?.clone();
    let mut pos = [0usize; 14];
    for (slot, col) in pos.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| perr(name, 1, format!("missing column `{col}`")))?;
    }

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(name, line, e))?;
        let get = |k: usize| rec.get(pos[k]).unwrap_or("").trim();
        let num = |k: usize| -> Result<i64> {
            get(k)
                .parse::<i64>()
                .map_err(|_| perr(name, line, format!("bad {} `{}`", COLUMNS[k], get(k))))
        };
        let date = NaiveDate::parse_from_str(get(0), "%Y-%m-%d")
            .map_err(|_| perr(name, line, format!("bad date `{}`", get(0))))?;
        let d_index: usize = get(6)
            .strip_prefix("d_")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| perr(name, line, format!("bad day key `{}`", get(6))))?;
        let opt = |k: usize| (!get(k).is_empty()).then(|| get(k).to_string());
        let event = |k: usize| -> Result<Option<EventType>> {
            match get(k) {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|m: String| Error::validation(format!("{name} row {line}: {m}"))),
            }
        };
        let mut snap = [0u8; 3];
        for (j, s) in snap.iter_mut().enumerate() {
            let v = num(11 + j)?;
            if v != 0 && v != 1 {
                return Err(Error::validation(format!(
                    "{name} row {line}: {} must be 0 or 1, got {v}",
                    COLUMNS[11 + j]
                )));
            }
            *s = v as u8;
        }
        rows.push(CalendarRow {
            date,
            d_index,
            wm_yr_wk: num(1)? as u32,
            weekday: get(2).to_string(),
            wday: num(3)? as u8,
            month: num(4)? as u8,
            year: num(5)? as i32,
            event_name_1: opt(7),
            event_type_1: event(8)?,
            event_name_2: opt(9),
            event_type_2: event(10)?,
            snap,
        });
    }

    rows.sort_by_key(|r| r.d_index);
    for (i, r) in rows.iter().enumerate() {
        if r.d_index != i + 1 {
            return Err(Error::validation(format!(
                "{name}: day index gap, expected d_{} but found d_{}",
                i + 1,
                r.d_index
            )));
        }
    }
    Ok(rows)
}

pub fn write_calendar<W: Write>(rows: &[CalendarRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in rows {
        let ev = |e: &Option<EventType>| e.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.wm_yr_wk.to_string(),
            r.weekday.clone(),
            r.wday.to_string(),
            r.month.to_string(),
            r.year.to_string(),
            format!("d_{}", r.d_index),
            r.event_name_1.clone().unwrap_or_default(),
            ev(&r.event_type_1),
            r.event_name_2.clone().unwrap_or_default(),
            ev(&r.event_type_2),
            r.snap[0].to_string(),
            r.snap[1].to_string(),
            r.snap[2].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<calendar writer>", e))?;
    Ok(())
}

fn perr(file: &str, row: usize, msg: impl ToString) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        message: msg.to_string(),
    }
}
