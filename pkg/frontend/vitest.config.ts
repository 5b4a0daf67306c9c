import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'happy-dom',
    // the UI is served by the QA service itself, so tests share its origin
    environmentOptions: {
      happyDOM: { url: 'http://127.0.0.1:18473' },
    },
    globalSetup: ['tests/global-setup.ts'],
    testTimeout: 30_000,
    hookTimeout: 120_000,
  },
});
