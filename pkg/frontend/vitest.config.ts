import { defineConfig } from "vitest/config";

// generous timeouts: the end-to-end test synthesizes a dataset and spawns
// the python study server before it can talk to it
export default defineConfig({
  test: {
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
