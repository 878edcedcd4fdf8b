import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    // the flow test generates a corpus and boots the python service
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
