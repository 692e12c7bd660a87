//! Weekly time axis: ISO-week indexing and calendar lookups.
//!
//! All series in the engine live on a weekly grid. A [`WeekIndex`] counts ISO
//! weeks since the Monday 1970-01-05, so consecutive integers are consecutive
//! calendar weeks regardless of year boundaries.

use chrono::{Datelike, NaiveDate, Weekday};

/// Number of whole ISO weeks since the reference Monday (1970-01-05).
pub type WeekIndex = i64;

fn epoch_monday() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 5).unwrap()
}

/// Maps a calendar date to the index of the ISO week containing it.
pub fn week_index(date: NaiveDate) -> WeekIndex {
    let iso = date.iso_week();
    let monday = NaiveDate::from_isoywd_opt(iso.year(), iso.week(), Weekday::Mon)
        .expect("valid ISO week");
    (monday - epoch_monday()).num_days() / 7
}

/// Monday of the given week.
pub fn week_monday(week: WeekIndex) -> NaiveDate {
    epoch_monday() + chrono::Duration::weeks(week)
}

/// ISO week number (1..=53) of the given week.
pub fn iso_week_number(week: WeekIndex) -> u32 {
    week_monday(week).iso_week().week()
}

/// Month (1..=12) of the Monday of the given week.
pub fn month_number(week: WeekIndex) -> u32 {
    week_monday(week).month()
}
