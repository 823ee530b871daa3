fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let header = std::path::Path::new(&crate_dir).join("include").join("etid.h");
    std::fs::create_dir_all(header.parent().unwrap()).unwrap();
    let mut config = cbindgen::Config::default();
    config.enumeration.prefix_with_name = true;
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .with_language(cbindgen::Language::C)
        .with_include_guard("ETID_H")
        .with_cpp_compat(true)
        .generate()
        .expect("unable to generate C header")
        .write_to_file(header);
    println!("cargo:rerun-if-changed=src/lib.rs");
}
