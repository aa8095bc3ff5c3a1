//! Input files in the M5 three-file layout and the joined panel.
//!
//! * sales: `id,item_id,dept_id,cat_id,store_id,state_id,d_1..d_N`
//!   (the `id` column is optional)
//! * calendar: `date,wm_yr_wk,weekday,wday,month,year,d,event_name_1,
//!   event_type_1,event_name_2,event_type_2,snap_CA,snap_TX,snap_WI`
//! * prices: `store_id,item_id,wm_yr_wk,sell_price`
//!
//! Day indices are 1-based throughout the crate.

mod calendar;
mod panel;
mod prices;
mod sales;

use std::path::Path;

pub use calendar::{load_calendar, parse_calendar, write_calendar, CalendarRow, EventType, SNAP_STATES};
pub use panel::{build_panel, code, CategoricalVocab, PanelDataset};
pub use prices::{load_prices, parse_prices, write_prices, PriceRow};
pub use sales::{load_sales, parse_sales, write_sales, SalesWide, SeriesIds};

use crate::error::Result;

/// Parse the three input files concurrently and join them into a panel.
pub fn load_panel(
    sales: impl AsRef<Path>,
    calendar: impl AsRef<Path>,
    prices: impl AsRef<Path>,
) -> Result<PanelDataset> {
    let (sales, calendar, prices) = (sales.as_ref(), calendar.as_ref(), prices.as_ref());
    let (s, c, p) = std::thread::scope(|scope| {
        let c = scope.spawn(|| load_calendar(calendar));
        let p = scope.spawn(|| load_prices(prices));
        let s = load_sales(sales);
        (
            s,
            c.join().expect("calendar parser panicked"),
            p.join().expect("price parser panicked"),
        )
    });
    build_panel(s?, c?, p?)
}
