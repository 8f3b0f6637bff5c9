use serde::{Deserialize, Serialize};

/// One gateway's reception report for one uplink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiRecord {
    /// Uplink time in seconds since the Unix epoch.
    pub timestamp_s: f64,
    pub node_id: String,
    pub gateway_id: String,
    pub rssi_dbm: f64,
    pub snr_db: f64,
    pub sf: u8,
    pub bw_khz: f64,
    /// Coding rate, e.g. `4/5`.
    pub cr: String,
    pub freq_mhz: f64,
    /// Ground-truth car count when the record is labeled.
    pub occupancy: Option<u32>,
}
