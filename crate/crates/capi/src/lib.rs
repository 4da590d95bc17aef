//! C ABI for the bubbletower pipeline (placeholder; filled in once the
//! pipeline surface is complete).
