//! Epoch handling. All epochs are MJD2000: days elapsed since
//! 2000-01-01 12:00 TT. Calendar dates are treated as UTC-free civil dates.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum DateError {
    #[error("cannot parse date `{0}`: expected YYYY-MM-DD or an MJD2000 number")]
    Parse(String),
}

fn j2000() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2000, 1, 1)
        .and_then(|d| d.and_hms_opt(12, 0, 0))
        .expect("valid reference epoch")
}

/// MJD2000 of a calendar date at 00:00.
pub fn calendar_to_mjd2000(date: NaiveDate) -> f64 {
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight exists");
    let dt = midnight - j2000();
    dt.num_milliseconds() as f64 / 1000.0 / SECONDS_PER_DAY
}

/// Civil date-time of an MJD2000 epoch, rounded to the second.
pub fn mjd2000_to_datetime(mjd: f64) -> NaiveDateTime {
    j2000() + Duration::seconds((mjd * SECONDS_PER_DAY).round() as i64)
}

/// `YYYY-MM-DD` rendering of an MJD2000 epoch.
pub fn mjd2000_to_calendar_string(mjd: f64) -> String {
    mjd2000_to_datetime(mjd).format("%Y-%m-%d").to_string()
}

/// Accepts either `YYYY-MM-DD` or a plain MJD2000 number.
pub fn parse_epoch(text: &str) -> Result<f64, DateError> {
    let text = text.trim();
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(calendar_to_mjd2000(d));
    }
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DateError::Parse(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_epoch_is_noon() {
        let d = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        assert_eq!(calendar_to_mjd2000(d), -0.5);
        assert_eq!(mjd2000_to_calendar_string(0.0), "2000-01-01");
    }

    #[test]
    fn parses_both_forms() {
        assert_eq!(parse_epoch("2010-01-01").unwrap(), 3652.5);
        assert_eq!(parse_epoch("3692").unwrap(), 3692.0);
        assert!(parse_epoch("12/02/2010").is_err());
    }

    #[test]
    fn calendar_round_trip() {
        for mjd in [-1000.0, 0.0, 3692.0, 5625.25] {
            let s = mjd2000_to_datetime(mjd);
            let back = (s - j2000()).num_seconds() as f64 / SECONDS_PER_DAY;
            assert!((back - mjd).abs() < 1e-5);
        }
    }
}
