//! Regenerates the C header from the source on every build, keeping the
//! committed include/bloch_homog.h in step with the exported surface.

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(format!("{crate_dir}/include/bloch_homog.h"));
        }
        Err(e) => println!("cargo:warning=header generation skipped: {e}"),
    }
}
