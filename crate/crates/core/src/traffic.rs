//! Grouped user traffic following a two-level (peak / off-peak) diurnal profile.
//!
//! Individual user requests form a Poisson process whose rate is piecewise
//! constant per GMT hour. Every `request_grouping_factor` consecutive requests
//! close one [`RequestBatch`], which is the unit the rest of the simulator
//! schedules. Arrival times are produced by walking the cumulative intensity
//! hour by hour, so rate changes land exactly on hour boundaries.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::scenario::{SimulationParams, UserBaseSpec};

pub const MS_PER_HOUR: f64 = 3.6e6;
pub const HOURS_PER_DAY: u64 = 24;

/// Users online at the given GMT hour; the peak window is half-open `[start, end)`.
pub fn active_users(ub: &UserBaseSpec, gmt_hour: u32) -> u64 {
    if (ub.peak_start_gmt..ub.peak_end_gmt).contains(&gmt_hour) {
        ub.avg_peak_users
    } else {
        ub.avg_offpeak_users
    }
}

/// Hour of day (GMT) for a simulated timestamp.
pub fn hour_of_day(time_ms: f64) -> u32 {
    ((time_ms / MS_PER_HOUR).floor() as u64 % HOURS_PER_DAY) as u32
}

/// User requests per millisecond at `time_ms`.
pub fn request_rate_per_ms(ub: &UserBaseSpec, time_ms: f64) -> f64 {
    active_users(ub, hour_of_day(time_ms)) as f64 * ub.requests_per_user_per_hour / MS_PER_HOUR
}

/// Expected user requests over the first `duration_hours` (a trailing partial hour counts pro rata).
pub fn expected_requests(ub: &UserBaseSpec, duration_hours: f64) -> f64 {
    if duration_hours <= 0.0 {
        return 0.0;
    }
    let whole = duration_hours.floor() as u64;
    let per_hour = |h: u64| active_users(ub, (h % HOURS_PER_DAY) as u32) as f64 * ub.requests_per_user_per_hour;
    let mut total: f64 = (0..whole).map(per_hour).sum();
    let frac = duration_hours - whole as f64;
    if frac > 0.0 {
        total += frac * per_hour(whole);
    }
    total
}

/// One schedulable unit of grouped user requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestBatch {
    pub ub_id: usize,
    pub created_at: f64,
    /// Users behind this batch: `min(user_grouping_factor, active users)`.
    pub user_count: u64,
    pub request_size_bytes: u64,
    /// User requests represented by this batch.
    pub group_size: u64,
}

/// Lifecycle record of one batch as it moves through the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub batch: RequestBatch,
    pub dc: Option<usize>,
    pub vm: Option<usize>,
    pub sent_at: f64,
    pub arrived_dc_at: Option<f64>,
    /// When the task was admitted to a VM; later than arrival only if it queued.
    pub started_at: Option<f64>,
    pub processing_done_at: Option<f64>,
    pub delivered_at: Option<f64>,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

impl Request {
    pub fn new(batch: RequestBatch, response_size_bytes: u64) -> Self {
        let uplink_bytes = batch.group_size * batch.request_size_bytes;
        let downlink_bytes = batch.group_size * response_size_bytes;
        Request {
            sent_at: batch.created_at,
            batch,
            dc: None,
            vm: None,
            arrived_dc_at: None,
            started_at: None,
            processing_done_at: None,
            delivered_at: None,
            uplink_bytes,
            downlink_bytes,
        }
    }

    /// `sent <= arrived <= started <= done <= delivered` over whichever stamps are set.
    pub fn timestamps_ordered(&self) -> bool {
        let stamps = [
            Some(self.sent_at),
            self.arrived_dc_at,
            self.started_at,
            self.processing_done_at,
            self.delivered_at,
        ];
        let set: Vec<f64> = stamps.into_iter().flatten().collect();
        set.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Time of the next single user request after `now`, or `None` if it would fall at or after `end_ms`.
fn next_request_time<R: Rng + ?Sized>(ub: &UserBaseSpec, now: f64, end_ms: f64, rng: &mut R) -> Option<f64> {
    // Unit-rate exponential in cumulative-intensity space, mapped back through the hourly rates.
    let mut mass: f64 = Exp1.sample(rng);
    let mut t = now;
    while t < end_ms {
        let boundary = (((t / MS_PER_HOUR).floor() + 1.0) * MS_PER_HOUR).min(end_ms);
        let rate = request_rate_per_ms(ub, t);
        let available = rate * (boundary - t);
        if rate > 0.0 && mass <= available {
            let at = t + mass / rate;
            return (at < end_ms).then_some(at);
        }
        mass -= available;
        t = boundary;
    }
    None
}

/// Next batch for a user base: the instant the `request_grouping_factor`-th request after `now`
/// is issued. Requests still accumulating when the run ends never form a batch.
pub fn schedule_next_batch<R: Rng + ?Sized>(
    ub: &UserBaseSpec,
    ub_id: usize,
    params: &SimulationParams,
    duration_ms: f64,
    now: f64,
    rng: &mut R,
) -> Option<(f64, RequestBatch)> {
    let mut t = now;
    for _ in 0..params.request_grouping_factor {
        t = next_request_time(ub, t, duration_ms, rng)?;
    }
    let users = active_users(ub, hour_of_day(t));
    Some((
        t,
        RequestBatch {
            ub_id,
            created_at: t,
            user_count: params.user_grouping_factor.min(users).max(1),
            request_size_bytes: ub.request_size_bytes,
            group_size: params.request_grouping_factor,
        },
    ))
}
