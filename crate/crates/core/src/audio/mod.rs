//! Waveforms to log-mel features, training-time augmentation, and the
//! on-disk feature cache.

pub mod augment;
pub mod feature_io;
pub mod logmel;
pub mod wav;

pub use augment::{mixup_batch, mixup_with_lambda, spec_augment};
pub use feature_io::{feature_cache_path, load_features, params_hash, save_features};
pub use logmel::{logmel, mel_center_freqs, mel_filterbank, LogMel, MelParams};
pub use wav::{read_wav, write_wav, Waveform};
