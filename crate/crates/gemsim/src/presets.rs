//! Scenarios shipped with the binary, usable by name wherever a scenario
//! file is expected.

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        /// Names of the shipped presets.
        pub const NAMES: &[&str] = &[$($name),*];

        /// Text of the preset called `name`.
        pub fn get(name: &str) -> Option<&'static str> {
            match name {
                $($name => Some(include_str!(concat!("../presets/", $name, ".scenario"))),)*
                _ => None,
            }
        }
    };
}

presets!(
    "paper_fig2a_spectrum",
    "paper_fig2b",
    "paper_fig2c_control_off",
    "paper_fig3a_20pulse",
    "paper_fig3b_shift",
    "paper_fig4b_power_sweep",
    "paper_fig5_capacity",
);
