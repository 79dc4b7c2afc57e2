//! Special token ids shared across the vocabulary, decoder, and search.

pub type TokenId = u32;

pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const PAD_ID: TokenId = 2;
/// Reserved for out-of-vocabulary tokens in validation/test captions.
pub const UNK_ID: TokenId = 3;

pub const NUM_SPECIALS: usize = 4;
pub const SPECIALS: [&str; NUM_SPECIALS] = ["<bos>", "<eos>", "<pad>", "<unk>"];
