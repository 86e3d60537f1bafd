//! Compile a .proto with `[Acc]` labels into a schema table, print its
//! report, and round-trip the binary table image.

use rpcacc::layout::record_size;
use rpcacc::schema::{compile_source, load_schema_table, render_report, serialize_schema_table};

const PROTO: &str = r#"
syntax = "proto3";
message Request {
  int64 id = 1;
  Photo photo = 2;
  repeated string tags = 3;
}
message Photo {
  bytes pixels = 1 [Acc];
  int32 width = 2;
  int32 height = 3;
  repeated bytes thumbnails = 4 [Acc];
}
"#;

fn main() {
    let table = compile_source(PROTO).unwrap().table;
    print!("{}", render_report(&table));

    for class in table.classes() {
        println!("{} record: {} B", class.name, record_size(class));
    }

    let image = serialize_schema_table(&table);
    assert_eq!(load_schema_table(&image).unwrap(), table);
    println!("table image: {} bytes, round-trips", image.len());

    match compile_source("message A { int32 x = 1; string y = 1; }") {
        Ok(_) => unreachable!(),
        Err(e) => println!("duplicate field number rejected: {e}"),
    }
}
