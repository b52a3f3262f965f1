//! Study calendar: year-month values and the month index used throughout the
//! model (`t = 0` is January 2010, `t = 179` is December 2024).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STUDY_START_YEAR: i32 = 2010;
pub const STUDY_END_YEAR: i32 = 2024;
/// Number of months in the 2010-01 … 2024-12 window.
pub const STUDY_MONTHS: usize = 180;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CalendarError {
    #[error("invalid year-month {0:?}, expected YYYY-MM")]
    Malformed(String),
    #[error("month {0} outside 1..=12")]
    BadMonth(u32),
    #[error("{0} lies outside the study window 2010-01..2024-12")]
    OutsideStudy(YearMonth),
    #[error("month range start {start} is after end {end}")]
    Inverted { start: YearMonth, end: YearMonth },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self, CalendarError> {
        if !(1..=12).contains(&month) {
            return Err(CalendarError::BadMonth(month));
        }
        Ok(Self { year, month })
    }

    /// Months elapsed since January 2010. Negative before the study window.
    pub fn offset(self) -> i64 {
        (self.year as i64 - STUDY_START_YEAR as i64) * 12 + (self.month as i64 - 1)
    }

    /// Study month index in `0..180`, or an error when outside the window.
    pub fn month_index(self) -> Result<usize, CalendarError> {
        let t = self.offset();
        if (0..STUDY_MONTHS as i64).contains(&t) {
            Ok(t as usize)
        } else {
            Err(CalendarError::OutsideStudy(self))
        }
    }

    pub fn from_index(t: usize) -> Self {
        Self {
            year: STUDY_START_YEAR + (t / 12) as i32,
            month: (t % 12) as u32 + 1,
        }
    }

    pub fn study_start() -> Self {
        Self { year: STUDY_START_YEAR, month: 1 }
    }

    pub fn study_end() -> Self {
        Self { year: STUDY_END_YEAR, month: 12 }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = CalendarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| CalendarError::Malformed(s.to_string()))?;
        let year = y.parse().map_err(|_| CalendarError::Malformed(s.to_string()))?;
        let month = m.parse().map_err(|_| CalendarError::Malformed(s.to_string()))?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive range of calendar months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl MonthRange {
    pub fn new(start: YearMonth, end: YearMonth) -> Result<Self, CalendarError> {
        if start > end {
            return Err(CalendarError::Inverted { start, end });
        }
        Ok(Self { start, end })
    }

    /// 2020-01 through 2022-12.
    pub fn covid_default() -> Self {
        Self {
            start: YearMonth { year: 2020, month: 1 },
            end: YearMonth { year: 2022, month: 12 },
        }
    }

    pub fn contains(&self, ym: YearMonth) -> bool {
        self.start <= ym && ym <= self.end
    }

    /// Membership test on study month indices.
    pub fn contains_index(&self, t: usize) -> bool {
        let t = t as i64;
        self.start.offset() <= t && t <= self.end.offset()
    }
}

impl fmt::Display for MonthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}
