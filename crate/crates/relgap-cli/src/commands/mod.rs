pub mod pretrain;
pub mod transfer;
pub mod verify;
