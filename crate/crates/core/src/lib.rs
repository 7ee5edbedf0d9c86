pub mod cli;
pub mod expr;
pub mod fem;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod verify;
pub mod wellposed;
