use std::fmt::Write;

use super::{Addressing, Label, MessageSchema, ScalarKind, SchemaTable};

fn type_name(table: &SchemaTable, kind: ScalarKind) -> String {
    match kind {
        ScalarKind::Message(id) => table
            .get(id)
            .map(|c| c.name.clone())
            .unwrap_or_else(|| format!("Unknown{id}")),
        k => k.proto_name().to_owned(),
    }
}

fn render_message(table: &SchemaTable, class: &MessageSchema, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    let short = class.name.rsplit('.').next().unwrap_or(&class.name);
    let _ = writeln!(out, "{pad}message {short} {{");
    for f in &class.fields {
        let label = if f.label == Label::Repeated {
            "repeated "
        } else {
            ""
        };
        let acc = if f.acc { " [Acc]" } else { "" };
        let _ = writeln!(
            out,
            "{pad}  {label}{} {} = {}{acc};",
            type_name(table, f.kind),
            f.name,
            f.number
        );
    }
    let prefix = format!("{}.", class.name);
    for child in table.classes() {
        let Some(rest) = child.name.strip_prefix(&prefix) else {
            continue;
        };
        if !rest.contains('.') {
            render_message(table, child, indent + 1, out);
        }
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Renders a table back to schema source. Current placement bits become
/// `[Acc]` annotations.
pub fn render_proto(table: &SchemaTable) -> String {
    let mut out = String::from("syntax = \"proto3\";\n\n");
    for class in table.classes().filter(|c| !c.name.contains('.')) {
        render_message(table, class, 0, &mut out);
        out.push('\n');
    }
    out
}

/// Human-readable summary of a compiled table.
pub fn render_report(table: &SchemaTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "schema table: {} classes", table.len());
    for class in table.classes() {
        let _ = writeln!(
            out,
            "\nclass {} {} ({} fields)",
            class.class_id,
            class.name,
            class.fields.len()
        );
        for f in &class.fields {
            let placement = match f.addressing() {
                Addressing::Direct => "inline",
                Addressing::Dereference if f.acc => "accelerator",
                Addressing::Dereference => "host",
            };
            let label = if f.label == Label::Repeated {
                "repeated"
            } else {
                "singular"
            };
            let _ = writeln!(
                out,
                "  {:>4}  {:<16} {:<10} {:<9} {:?}  -> {}",
                f.number,
                f.name,
                type_name(table, f.kind),
                label,
                f.addressing(),
                placement
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::compile_source;

    #[test]
    fn render_round_trips_through_compiler() {
        let src = "message A { message B { bytes x = 1 [Acc]; } repeated B bs = 1; int32 n = 2; }
                   message C { A a = 3; }";
        let table = compile_source(src).unwrap().table;
        let again = compile_source(&render_proto(&table)).unwrap().table;
        assert_eq!(again, table);
    }

    #[test]
    fn report_lists_placement() {
        let table = compile_source("message Photo { bytes image = 1 [Acc]; int64 size = 2; }")
            .unwrap()
            .table;
        let report = render_report(&table);
        assert!(report.contains("image"));
        assert!(report.contains("-> accelerator"));
        assert!(report.contains("-> inline"));
    }
}
