export { render } from "./render.js";
export type { FigureSpec } from "./render.js";
export { SCHEMAS, SchemaError, schemaFor } from "./schema.js";
export type { FigureKind, OutputFormat } from "./schema.js";
export { parseCsv, numericColumn } from "./csv.js";
