import Papa from "papaparse";
import { SchemaError } from "./schema.js";

export interface Table {
  header: string[];
  /** column name -> raw string cells, row-aligned */
  columns: Map<string, string[]>;
  nRows: number;
}

export function parseCsv(text: string): Table {
  const parsed = Papa.parse<string[]>(text.trim(), { skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new SchemaError(`CSV parse error at row ${e.row}: ${e.message}`);
  }
  const rows = parsed.data;
  if (rows.length === 0) throw new SchemaError("empty CSV: no header row");
  const header = rows[0].map((h) => h.trim());
  const body = rows.slice(1);
  if (body.length === 0) throw new SchemaError("empty CSV: header but no data rows");
  const columns = new Map<string, string[]>();
  header.forEach((name, i) => {
    columns.set(
      name,
      body.map((r) => (r[i] ?? "").trim()),
    );
  });
  return { header, columns, nRows: body.length };
}

/** Numeric column fetch; a missing column or non-numeric cell is a hard error. */
export function numericColumn(table: Table, name: string): number[] {
  const raw = table.columns.get(name);
  if (raw === undefined) {
    throw new SchemaError(
      `missing required column '${name}' (have: ${table.header.join(", ")})`,
    );
  }
  return raw.map((cell, i) => {
    if (cell === "") return NaN; // gaps allowed, skipped when drawing
    const v = Number(cell);
    if (!Number.isFinite(v)) {
      throw new SchemaError(`non-numeric value '${cell}' in column '${name}' row ${i + 1}`);
    }
    return v;
  });
}

export function stringColumn(table: Table, name: string): string[] {
  const raw = table.columns.get(name);
  if (raw === undefined) {
    throw new SchemaError(
      `missing required column '${name}' (have: ${table.header.join(", ")})`,
    );
  }
  return raw;
}
