//! Link-budget path loss, the log-distance expected path loss and the
//! occupancy-modulated channel simulator.

mod scenario;

pub use scenario::{
    simulate_scenario, OccupancyProcess, ScenarioConfig, ScenarioStream, DEFAULT_NODE_ID,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::RssiRecord;
use crate::scalar::Scalar;

/// Link-budget and log-distance path loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RadioParams<T> {
    /// Transmit power (dBm).
    pub ptx_dbm: T,
    /// Transmitter antenna gain (dBi).
    pub gtx_dbi: T,
    /// Path loss at the reference distance (dB).
    pub pl_d0_db: T,
    /// Path-loss exponent.
    pub n_exponent: T,
    /// Reference distance (m).
    pub d0_m: T,
    /// Shadow-fading standard deviation (dB).
    pub sigma_db: T,
}

impl<T: Scalar> Default for RadioParams<T> {
    fn default() -> Self {
        Self {
            ptx_dbm: T::of(14.0),
            gtx_dbi: T::of(2.0),
            pl_d0_db: T::of(40.0),
            n_exponent: T::of(2.7),
            d0_m: T::one(),
            sigma_db: T::of(0.5),
        }
    }
}

impl<T: Scalar> RadioParams<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ptx_dbm,
            self.gtx_dbi,
            self.pl_d0_db,
            self.n_exponent,
            self.d0_m,
            self.sigma_db,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("radio parameters must be finite".into()));
        }
        if self.d0_m <= T::zero() {
            return Err(Error::Config(format!(
                "d0_m must be > 0, got {}",
                self.d0_m
            )));
        }
        if self.sigma_db < T::zero() {
            return Err(Error::Config(format!(
                "sigma_db must be >= 0, got {}",
                self.sigma_db
            )));
        }
        if self.n_exponent <= T::zero() {
            return Err(Error::Config(format!(
                "n_exponent must be > 0, got {}",
                self.n_exponent
            )));
        }
        Ok(())
    }
}

/// Sign convention used when turning a gateway report into a path loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLossMode {
    /// `RSSI + SNR + Ptx + Gtx`, the link-budget sum taken literally.
    LinkSum,
    /// `Ptx + Gtx - RSSI`, a positive attenuation.
    #[default]
    Physical,
}

/// Path loss implied by a measured RSSI/SNR pair.
pub fn path_loss_from_measurement<T: Scalar>(
    rssi_dbm: T,
    snr_db: T,
    params: &RadioParams<T>,
    mode: PathLossMode,
) -> Result<T> {
    let inputs = [rssi_dbm, snr_db, params.ptx_dbm, params.gtx_dbi];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMeasurement(format!(
            "non-finite input (rssi={rssi_dbm}, snr={snr_db}, ptx={}, gtx={})",
            params.ptx_dbm, params.gtx_dbi
        )));
    }
    Ok(match mode {
        PathLossMode::LinkSum => rssi_dbm + snr_db + params.ptx_dbm + params.gtx_dbi,
        PathLossMode::Physical => params.ptx_dbm + params.gtx_dbi - rssi_dbm,
    })
}

impl RssiRecord {
    pub fn path_loss(&self, params: &RadioParams<f64>, mode: PathLossMode) -> Result<f64> {
        path_loss_from_measurement(self.rssi_dbm, self.snr_db, params, mode)
    }
}

/// Log-distance path loss `PL(d0) + 10 n log10(d/d0) + shadow`.
pub fn expected_path_loss<T: Scalar>(d_m: T, params: &RadioParams<T>, shadow_db: T) -> Result<T> {
    if !(d_m > T::zero()) || !d_m.is_finite() {
        return Err(Error::Domain(format!(
            "distance must be finite and > 0, got {d_m}"
        )));
    }
    if !(params.d0_m > T::zero()) {
        return Err(Error::Domain(format!(
            "d0_m must be > 0, got {}",
            params.d0_m
        )));
    }
    let ten = T::of(10.0);
    Ok(params.pl_d0_db + ten * params.n_exponent * (d_m / params.d0_m).log10() + shadow_db)
}

/// Measured minus expected path loss; positive values mean extra attenuation.
pub fn path_loss_residual<T: Scalar>(measured_pl: T, expected_pl: T) -> Result<T> {
    if !measured_pl.is_finite() || !expected_pl.is_finite() {
        return Err(Error::InvalidMeasurement(format!(
            "non-finite path loss (measured={measured_pl}, expected={expected_pl})"
        )));
    }
    Ok(measured_pl - expected_pl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pl_d0: f64, n: f64) -> RadioParams<f64> {
        RadioParams {
            ptx_dbm: 14.0,
            gtx_dbi: 2.0,
            pl_d0_db: pl_d0,
            n_exponent: n,
            d0_m: 1.0,
            sigma_db: 0.0,
        }
    }

    #[test]
    fn measurement_modes() {
        let p = params(40.0, 2.7);
        assert_eq!(
            path_loss_from_measurement(-100.0, 7.0, &p, PathLossMode::LinkSum).unwrap(),
            -77.0
        );
        assert_eq!(
            path_loss_from_measurement(-100.0, 7.0, &p, PathLossMode::Physical).unwrap(),
            116.0
        );
        let zero = RadioParams {
            ptx_dbm: 0.0,
            gtx_dbi: 0.0,
            ..p
        };
        for mode in [PathLossMode::LinkSum, PathLossMode::Physical] {
            assert_eq!(
                path_loss_from_measurement(0.0, 0.0, &zero, mode).unwrap(),
                0.0
            );
        }
        assert_eq!(PathLossMode::default(), PathLossMode::Physical);
    }

    #[test]
    fn non_finite_measurement_rejected() {
        let p = params(40.0, 2.7);
        let err = path_loss_from_measurement(f64::NAN, 0.0, &p, PathLossMode::Physical);
        assert!(matches!(err, Err(Error::InvalidMeasurement(_))));
        assert!(path_loss_residual(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn expected_path_loss_examples() {
        assert_eq!(
            expected_path_loss(1.0, &params(40.0, 2.7), 0.0).unwrap(),
            40.0
        );
        assert!((expected_path_loss(100.0, &params(40.0, 2.7), 0.0).unwrap() - 94.0).abs() < 1e-12);
        assert!((expected_path_loss(10.0, &params(40.0, 2.0), 1.5).unwrap() - 61.5).abs() < 1e-12);
        let f32_params = RadioParams::<f32> {
            n_exponent: 2.0,
            sigma_db: 0.0,
            ..Default::default()
        };
        assert!((expected_path_loss(10.0f32, &f32_params, 0.0).unwrap() - 60.0).abs() < 1e-4);
    }

    #[test]
    fn expected_path_loss_domain() {
        let p = params(40.0, 2.7);
        assert!(matches!(
            expected_path_loss(0.0, &p, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            expected_path_loss(-3.0, &p, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn residual_examples() {
        assert_eq!(path_loss_residual(94.0, 94.0).unwrap(), 0.0);
        assert!((path_loss_residual(96.3f64, 94.0).unwrap() - 2.3).abs() < 1e-12);
        assert_eq!(path_loss_residual(90.0, 94.0).unwrap(), -4.0);
    }

    #[test]
    fn params_validation() {
        assert!(params(40.0, 2.7).validate().is_ok());
        assert!(params(40.0, 0.0).validate().is_err());
        assert!(RadioParams {
            d0_m: 0.0,
            ..params(40.0, 2.0)
        }
        .validate()
        .is_err());
        assert!(RadioParams {
            sigma_db: -1.0,
            ..params(40.0, 2.0)
        }
        .validate()
        .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn physical_identity(rssi in -140.0f64..0.0, snr in -20.0f64..15.0,
                                 ptx in -5.0f64..30.0, gtx in -3.0f64..10.0) {
                let p = RadioParams { ptx_dbm: ptx, gtx_dbi: gtx, ..params(40.0, 2.7) };
                let pl = path_loss_from_measurement(rssi, snr, &p, PathLossMode::Physical).unwrap();
                prop_assert!((pl + rssi - (ptx + gtx)).abs() < 1e-9);
            }

            #[test]
            fn epl_increasing_in_distance(d in 0.5f64..5000.0, step in 1e-3f64..100.0,
                                          n in 0.1f64..6.0, shadow in -5.0f64..5.0) {
                let p = params(40.0, n);
                let a = expected_path_loss(d, &p, shadow).unwrap();
                let b = expected_path_loss(d + step, &p, shadow).unwrap();
                prop_assert!(b > a);
            }

            #[test]
            fn epl_at_reference(d0 in 0.1f64..100.0, pl0 in 20.0f64..80.0, n in 0.5f64..5.0) {
                let p = RadioParams { d0_m: d0, ..params(pl0, n) };
                prop_assert_eq!(expected_path_loss(d0, &p, 0.0).unwrap(), pl0);
            }
        }
    }
}
