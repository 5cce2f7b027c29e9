#!/usr/bin/env node
/** Render one figure from a plot-spec JSON file: `node dist/cli.js spec.json` */

import { loadSpec, render } from "./render.js";
import { SchemaMismatch } from "./schema.js";

function main(argv: string[]): number {
  if (argv.length !== 1 || argv[0] === "--help") {
    console.error("usage: render <spec.json>");
    return 2;
  }
  try {
    const out = render(loadSpec(argv[0]));
    console.log(out);
    return 0;
  } catch (err) {
    if (err instanceof SchemaMismatch) {
      console.error(`spec/artifact error: ${err.message}`);
      return 2;
    }
    console.error(String(err));
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
