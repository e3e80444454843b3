//! File formats: PCM WAV, headered CSV time series and flat `key=value`
//! settings files.

mod kv;
mod series;
mod wav;

pub use kv::KvFile;
pub use series::{read_series, write_series, write_table};
pub use wav::{read_wav, write_wav};
