#!/usr/bin/env node
import { readFileSync, writeFileSync } from "node:fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { render } from "./render.js";
import { FigureKind, OutputFormat, SchemaError } from "./schema.js";

const KINDS: FigureKind[] = ["fig2", "fig3", "fig4", "herald_hist"];
const FORMATS: OutputFormat[] = ["svg", "pdf", "png"];

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .option("kind", { choices: KINDS, demandOption: true, type: "string" })
    .option("in", { demandOption: true, type: "string", describe: "input CSV path" })
    .option("out", { demandOption: true, type: "string", describe: "output figure path" })
    .option("format", {
      choices: FORMATS,
      type: "string",
      describe: "output format (default: from the output extension)",
    })
    .strict()
    .exitProcess(false)
    .fail((msg) => {
      throw new UsageError(msg);
    })
    .parse();

  const format = (args.format ??
    args.out.split(".").pop()?.toLowerCase() ?? "svg") as OutputFormat;
  if (!FORMATS.includes(format)) {
    throw new UsageError(`cannot infer format from '${args.out}'; pass --format`);
  }
  const csv = readFileSync(args.in, "utf-8");
  const bytes = render({
    inputCsv: csv,
    figureKind: args.kind as FigureKind,
    format,
  });
  writeFileSync(args.out, bytes);
  console.log(`wrote ${args.out} (${bytes.length} bytes)`);
  return 0;
}

class UsageError extends Error {}

const isMain = process.argv[1]?.endsWith("cli.js");
if (isMain) {
  main(hideBin(process.argv))
    .then((code) => process.exit(code))
    .catch((err) => {
      if (err instanceof UsageError) {
        console.error(`usage error: ${err.message}`);
        process.exit(2);
      }
      if (err instanceof SchemaError) {
        console.error(`schema error: ${err.message}`);
        process.exit(1);
      }
      console.error(String(err?.stack ?? err));
      process.exit(1);
    });
}
