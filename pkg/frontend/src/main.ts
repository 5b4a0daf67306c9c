import { ApiClient } from './api.js';
import { createApp } from './app.js';

document.addEventListener('DOMContentLoaded', () => {
  const root = document.getElementById('app');
  if (root) {
    void createApp(root, new ApiClient(''));
  }
});
