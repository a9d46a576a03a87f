import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { main } from "../src/cli.js";
import { SchemaError } from "../src/schema.js";

function tmp(): string {
  return mkdtempSync(join(tmpdir(), "plotgen-"));
}

const CSV = [
  "lambda_t,N_kappa_0.1,N_kappa_0.2,N_kappa_0.5,N_kappa_1.0",
  "0,0,0,0,0",
  "1,0.1,0.2,0.5,1.0",
  "2,0.4,0.8,2.0,3.0",
].join("\n");

describe("cli", () => {
  it("writes an svg figure", async () => {
    const dir = tmp();
    const input = join(dir, "fig2.csv");
    const output = join(dir, "fig2.svg");
    writeFileSync(input, CSV);
    const code = await main(["--kind", "fig2", "--in", input, "--out", output]);
    expect(code).toBe(0);
    expect(readFileSync(output, "utf-8")).toContain("<svg");
  });

  it("infers pdf format from the extension", async () => {
    const dir = tmp();
    const input = join(dir, "fig2.csv");
    const output = join(dir, "fig2.pdf");
    writeFileSync(input, CSV);
    await main(["--kind", "fig2", "--in", input, "--out", output]);
    expect(readFileSync(output, "latin1").startsWith("%PDF")).toBe(true);
  });

  it("propagates schema errors for mismatched input", async () => {
    const dir = tmp();
    const input = join(dir, "bad.csv");
    const output = join(dir, "fig3.svg");
    writeFileSync(input, CSV); // fig2 columns fed to fig3
    await expect(
      main(["--kind", "fig3", "--in", input, "--out", output]),
    ).rejects.toThrow(SchemaError);
  });
});
