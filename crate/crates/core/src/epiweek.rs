//! MMWR epidemiological weeks.
//!
//! Weeks run Sunday through Saturday. Week 1 of a year is the week that
//! contains January 4th, so a year has either 52 or 53 weeks.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized as `"2014w41"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EpiWeek {
    pub year: i32,
    pub week: u32,
}

fn year_start(year: i32) -> NaiveDate {
    let jan4 = NaiveDate::from_ymd_opt(year, 1, 4).expect("valid calendar date");
    jan4 - Duration::days(jan4.weekday().num_days_from_sunday() as i64)
}

/// Number of MMWR weeks in `year` (52 or 53).
pub fn weeks_in_year(year: i32) -> u32 {
    ((year_start(year + 1) - year_start(year)).num_days() / 7) as u32
}

impl EpiWeek {
    pub fn new(year: i32, week: u32) -> Result<Self> {
        if week == 0 || week > weeks_in_year(year) {
            return Err(Error::invalid(
                "epi week",
                format!("{year} has no week {week}"),
            ));
        }
        Ok(EpiWeek { year, week })
    }

    /// Sunday that starts this week.
    pub fn start_date(&self) -> NaiveDate {
        year_start(self.year) + Duration::weeks(self.week as i64 - 1)
    }

    /// The week containing `date`.
    pub fn from_date(date: NaiveDate) -> Self {
        let mut year = date.year();
        if date < year_start(year) {
            year -= 1;
        } else if date >= year_start(year + 1) {
            year += 1;
        }
        let week = ((date - year_start(year)).num_days() / 7) as u32 + 1;
        EpiWeek { year, week }
    }

    pub fn succ(&self) -> Self {
        if self.week < weeks_in_year(self.year) {
            EpiWeek {
                year: self.year,
                week: self.week + 1,
            }
        } else {
            EpiWeek {
                year: self.year + 1,
                week: 1,
            }
        }
    }

    pub fn pred(&self) -> Self {
        if self.week > 1 {
            EpiWeek {
                year: self.year,
                week: self.week - 1,
            }
        } else {
            EpiWeek {
                year: self.year - 1,
                week: weeks_in_year(self.year - 1),
            }
        }
    }

    pub fn offset(&self, weeks: i64) -> Self {
        EpiWeek::from_date(self.start_date() + Duration::weeks(weeks))
    }

    /// Signed number of weeks from `self` to `other`.
    pub fn weeks_until(&self, other: &EpiWeek) -> i64 {
        (other.start_date() - self.start_date()).num_days() / 7
    }
}

impl fmt::Display for EpiWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}w{:02}", self.year, self.week)
    }
}

impl FromStr for EpiWeek {
    type Err = Error;

    /// Accepts `2014w41` or `2014-41`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, w) = s
            .split_once(['w', 'W', '-'])
            .ok_or_else(|| Error::invalid("epi week", format!("cannot parse {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| Error::invalid("epi week", format!("bad year in {s:?}")))?;
        let week = w
            .parse()
            .map_err(|_| Error::invalid("epi week", format!("bad week in {s:?}")))?;
        EpiWeek::new(year, week)
    }
}

impl TryFrom<String> for EpiWeek {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EpiWeek> for String {
    fn from(w: EpiWeek) -> String {
        w.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_53_week_years() {
        // MMWR years with 53 weeks in this period.
        for y in [2008, 2014, 2020] {
            assert_eq!(weeks_in_year(y), 53, "{y}");
        }
        for y in [2010, 2011, 2012, 2013, 2015, 2016, 2017, 2018, 2019] {
            assert_eq!(weeks_in_year(y), 52, "{y}");
        }
    }

    #[test]
    fn known_start_dates() {
        // 2014w41 began on Sunday 2014-10-05; 2020w12 on 2020-03-15.
        let w = EpiWeek::new(2014, 41).unwrap();
        assert_eq!(w.start_date(), NaiveDate::from_ymd_opt(2014, 10, 5).unwrap());
        let w = EpiWeek::new(2020, 12).unwrap();
        assert_eq!(w.start_date(), NaiveDate::from_ymd_opt(2020, 3, 15).unwrap());
    }

    #[test]
    fn successor_wraps_at_year_end() {
        assert_eq!(EpiWeek::new(2014, 53).unwrap().succ(), EpiWeek { year: 2015, week: 1 });
        assert_eq!(EpiWeek::new(2015, 52).unwrap().succ(), EpiWeek { year: 2016, week: 1 });
        assert_eq!(EpiWeek::new(2015, 1).unwrap().pred(), EpiWeek { year: 2014, week: 53 });
        assert!(EpiWeek::new(2015, 53).is_err());
    }

    #[test]
    fn offset_and_distance_agree_with_succ() {
        let start = EpiWeek::new(2012, 40).unwrap();
        let mut w = start;
        for k in 0..400 {
            assert_eq!(start.offset(k), w);
            assert_eq!(start.weeks_until(&w), k);
            assert_eq!(EpiWeek::from_date(w.start_date()), w);
            assert!(w.succ() > w);
            assert_eq!(w.succ().pred(), w);
            w = w.succ();
        }
    }

    #[test]
    fn parse_and_display() {
        let w: EpiWeek = "2014w41".parse().unwrap();
        assert_eq!(w, EpiWeek { year: 2014, week: 41 });
        assert_eq!(w.to_string(), "2014w41");
        assert_eq!("2020-03".parse::<EpiWeek>().unwrap().to_string(), "2020w03");
        assert!("2020x".parse::<EpiWeek>().is_err());
    }
}
