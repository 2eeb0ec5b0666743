//! Learnable components: Fourier step embedding, bidirectional LSTM context
//! encoder, and the velocity MLP. All forward passes are generic over
//! [`crate::numcore::OpCtx`], so they run identically on the gradient tape
//! (training) and on plain matrices (inference).

pub mod encoder;
pub mod fourier;
pub mod lstm;
pub mod mlp;

pub use encoder::{encode_context, init_encoder, EncoderCfg};
pub use fourier::{fourier_embed, fourier_rows};
pub use lstm::{init_lstm, lstm_forward, LstmOut, LstmSpec};
pub use mlp::{init_mlp, mlp_forward, MlpCfg};
